#pragma once

#include "cfa_lab/world/geometry.hpp"
#include "cfa_lab/world/scene_io.hpp"
#include "cfa_lab/world/world.hpp"
