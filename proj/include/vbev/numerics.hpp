#pragma once

#include "vbev/numerics/attention_core.hpp"
#include "vbev/numerics/gradcheck.hpp"
#include "vbev/numerics/losses.hpp"
#include "vbev/numerics/memory.hpp"
#include "vbev/numerics/nn.hpp"
#include "vbev/numerics/ops.hpp"
#include "vbev/numerics/rng.hpp"
#include "vbev/numerics/sampling.hpp"
#include "vbev/numerics/tensor.hpp"
