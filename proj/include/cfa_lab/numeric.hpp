#pragma once

#include "cfa_lab/numeric/conv.hpp"
#include "cfa_lab/numeric/grad_check.hpp"
#include "cfa_lab/numeric/grid.hpp"
#include "cfa_lab/numeric/losses.hpp"
#include "cfa_lab/numeric/ops.hpp"
#include "cfa_lab/numeric/param_store.hpp"
