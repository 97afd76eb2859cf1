#pragma once

#include "cfa_lab/cfa/adapter.hpp"
#include "cfa_lab/cfa/dataset.hpp"
#include "cfa_lab/cfa/losses.hpp"
#include "cfa_lab/cfa/train.hpp"
