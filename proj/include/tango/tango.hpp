#pragma once

#include "tango/common.hpp"
#include "tango/experiments.hpp"
#include "tango/harness.hpp"
#include "tango/linalg.hpp"
#include "tango/models.hpp"
#include "tango/optimizers.hpp"
#include "tango/reference.hpp"
#include "tango/trajectory.hpp"
#include "tango/verification.hpp"
