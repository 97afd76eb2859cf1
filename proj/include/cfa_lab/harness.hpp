#pragma once

#include "cfa_lab/harness/efficiency.hpp"
#include "cfa_lab/harness/experiment.hpp"
#include "cfa_lab/harness/report.hpp"
