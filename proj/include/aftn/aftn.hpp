#pragma once

#include <aftn/config.hpp>
#include <aftn/data.hpp>
#include <aftn/error.hpp>
#include <aftn/geometry.hpp>
#include <aftn/model_io.hpp>
#include <aftn/network.hpp>
#include <aftn/ops.hpp>
#include <aftn/optim.hpp>
#include <aftn/parallel.hpp>
#include <aftn/report.hpp>
#include <aftn/rng.hpp>
#include <aftn/synth.hpp>
#include <aftn/tensor.hpp>
#include <aftn/track.hpp>
#include <aftn/train.hpp>
