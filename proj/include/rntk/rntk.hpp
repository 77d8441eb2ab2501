#pragma once

#include "rntk/errors.hpp"
#include "rntk/params.hpp"
#include "rntk/dual_activation.hpp"
#include "rntk/kernel.hpp"
#include "rntk/gram_io.hpp"
#include "rntk/oracle.hpp"
#include "rntk/svm.hpp"
#include "rntk/dataset.hpp"
#include "rntk/bench.hpp"
#include "rntk/verify.hpp"
#include "rntk/timing.hpp"
#include "rntk/log.hpp"
