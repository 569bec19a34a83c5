#pragma once

#include "biofuse/dataset.hpp"
#include "biofuse/encoder.hpp"
#include "biofuse/error.hpp"
#include "biofuse/evaluation.hpp"
#include "biofuse/fusion.hpp"
#include "biofuse/gradcheck.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/model_io.hpp"
#include "biofuse/optimizer.hpp"
#include "biofuse/pipeline.hpp"
#include "biofuse/preprocessing.hpp"
#include "biofuse/rng.hpp"
#include "biofuse/synthgen.hpp"
#include "biofuse/training.hpp"
#include "biofuse/windowing.hpp"
