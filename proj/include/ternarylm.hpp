#pragma once

#include "ternarylm/analysis.hpp"
#include "ternarylm/checkpoint.hpp"
#include "ternarylm/config.hpp"
#include "ternarylm/data.hpp"
#include "ternarylm/error.hpp"
#include "ternarylm/finetune.hpp"
#include "ternarylm/generate.hpp"
#include "ternarylm/gradcheck.hpp"
#include "ternarylm/histogram.hpp"
#include "ternarylm/io.hpp"
#include "ternarylm/kernels.hpp"
#include "ternarylm/model.hpp"
#include "ternarylm/ops.hpp"
#include "ternarylm/optim.hpp"
#include "ternarylm/packed.hpp"
#include "ternarylm/quantization.hpp"
#include "ternarylm/random.hpp"
#include "ternarylm/storage.hpp"
#include "ternarylm/synthetic.hpp"
#include "ternarylm/tensor.hpp"
#include "ternarylm/train.hpp"
#include "ternarylm/version.hpp"
#include "ternarylm/vocab.hpp"
