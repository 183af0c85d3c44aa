#pragma once

#include "pointveil/common.hpp"
#include "pointveil/rng.hpp"
#include "pointveil/mat.hpp"
#include "pointveil/io.hpp"
#include "pointveil/params.hpp"
#include "pointveil/tape.hpp"
#include "pointveil/optimizer.hpp"
#include "pointveil/flow.hpp"
#include "pointveil/encoder.hpp"
#include "pointveil/data.hpp"
#include "pointveil/model.hpp"
#include "pointveil/crypto.hpp"
#include "pointveil/training.hpp"
#include "pointveil/metrics.hpp"
#include "pointveil/downstream.hpp"
#include "pointveil/config.hpp"
