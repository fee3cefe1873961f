#pragma once

#include "oodmap/dataset.hpp"
#include "oodmap/mahalanobis.hpp"
#include "oodmap/scoring.hpp"
#include "oodmap/sweep.hpp"
#include "oodmap/synth.hpp"
#include "oodmap/tensor.hpp"
