#pragma once

// Core library. The JSON/CSV layer lives in sdot/io.hpp.
#include "sdot/numeric.hpp"
#include "sdot/storage_fee.hpp"
#include "sdot/problem.hpp"
#include "sdot/transforms.hpp"
#include "sdot/plan.hpp"
#include "sdot/solver.hpp"
#include "sdot/oracle.hpp"
