#pragma once

#include "vmunet/augment.hpp"
#include "vmunet/checkpoint.hpp"
#include "vmunet/config.hpp"
#include "vmunet/error.hpp"
#include "vmunet/gradcheck.hpp"
#include "vmunet/label_map.hpp"
#include "vmunet/layers.hpp"
#include "vmunet/losses.hpp"
#include "vmunet/metrics.hpp"
#include "vmunet/netpbm.hpp"
#include "vmunet/network.hpp"
#include "vmunet/ops.hpp"
#include "vmunet/optim.hpp"
#include "vmunet/random.hpp"
#include "vmunet/ss2d.hpp"
#include "vmunet/ssm.hpp"
#include "vmunet/synth.hpp"
#include "vmunet/tensor.hpp"
#include "vmunet/train.hpp"
#include "vmunet/verify.hpp"
#include "vmunet/vss.hpp"
