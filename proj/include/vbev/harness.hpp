#pragma once

#include "vbev/harness/bench.hpp"
#include "vbev/harness/config.hpp"
#include "vbev/harness/eval.hpp"
#include "vbev/harness/gradcheck_suite.hpp"
#include "vbev/harness/train.hpp"
