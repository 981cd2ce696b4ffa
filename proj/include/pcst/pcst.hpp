#pragma once

// Everything, for tools that want the whole pipeline.

#include "pcst/autograd.hpp"
#include "pcst/baseline.hpp"
#include "pcst/channel.hpp"
#include "pcst/config.hpp"
#include "pcst/entropy_model.hpp"
#include "pcst/jscc.hpp"
#include "pcst/metrics.hpp"
#include "pcst/model.hpp"
#include "pcst/multires.hpp"
#include "pcst/nn.hpp"
#include "pcst/optim.hpp"
#include "pcst/pc_io.hpp"
#include "pcst/pipeline.hpp"
#include "pcst/plot.hpp"
#include "pcst/range_coder.hpp"
#include "pcst/sideinfo.hpp"
#include "pcst/sparse_tensor.hpp"
#include "pcst/train.hpp"
