#pragma once

// CAD-prior instance reconstruction: PPF codebook training, local
// implicit-shape-model detection, hypothesis verification, linear-time
// pose graph construction and multiview point-to-plane refinement.

#include "cadrec/codebook.hpp"
#include "cadrec/config.hpp"
#include "cadrec/detector.hpp"
#include "cadrec/distance_field.hpp"
#include "cadrec/geometry.hpp"
#include "cadrec/io.hpp"
#include "cadrec/json_io.hpp"
#include "cadrec/kdtree.hpp"
#include "cadrec/pose_graph.hpp"
#include "cadrec/refiner.hpp"
#include "cadrec/sampling.hpp"
#include "cadrec/synth.hpp"
#include "cadrec/verifier.hpp"
#include "cadrec/voxel_grid.hpp"
