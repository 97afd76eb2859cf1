#pragma once

#include "cfa_lab/models/agent.hpp"
#include "cfa_lab/models/task.hpp"
