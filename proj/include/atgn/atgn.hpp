#pragma once

#include "atgn/error.hpp"
#include "atgn/tensor.hpp"
#include "atgn/kernels.hpp"
#include "atgn/ops.hpp"
#include "atgn/gradcheck.hpp"
#include "atgn/params.hpp"
#include "atgn/audio.hpp"
#include "atgn/wav.hpp"
#include "atgn/feature_file.hpp"
#include "atgn/labels.hpp"
#include "atgn/encoders.hpp"
#include "atgn/tcn.hpp"
#include "atgn/fusion.hpp"
#include "atgn/model.hpp"
#include "atgn/loss.hpp"
#include "atgn/optim.hpp"
#include "atgn/metrics.hpp"
#include "atgn/clips.hpp"
#include "atgn/dataset.hpp"
#include "atgn/synthetic.hpp"
#include "atgn/train.hpp"
#include "atgn/config.hpp"
