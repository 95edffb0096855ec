#pragma once

// Umbrella header.

#include "saddlemg/mesh.hpp"
#include "saddlemg/linalg.hpp"
#include "saddlemg/mixed_fem.hpp"
#include "saddlemg/hierarchy.hpp"
#include "saddlemg/saddle_mg.hpp"
#include "saddlemg/noncon_cr.hpp"
#include "saddlemg/theory_lab.hpp"
#include "saddlemg/bench.hpp"
