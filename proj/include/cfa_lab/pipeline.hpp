#pragma once

#include "cfa_lab/pipeline/checkpoint.hpp"
#include "cfa_lab/pipeline/message.hpp"
#include "cfa_lab/pipeline/round.hpp"
#include "cfa_lab/pipeline/warp.hpp"
