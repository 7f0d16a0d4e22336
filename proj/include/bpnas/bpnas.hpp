// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bpnas/autodiff.hpp"
#include "bpnas/checks.hpp"
#include "bpnas/config.hpp"
#include "bpnas/costmodel.hpp"
#include "bpnas/data.hpp"
#include "bpnas/gradcheck.hpp"
#include "bpnas/io.hpp"
#include "bpnas/log.hpp"
#include "bpnas/model.hpp"
#include "bpnas/optim.hpp"
#include "bpnas/oracle.hpp"
#include "bpnas/pipeline.hpp"
#include "bpnas/quantize.hpp"
#include "bpnas/regularizers.hpp"
#include "bpnas/report.hpp"
#include "bpnas/rng.hpp"
#include "bpnas/search.hpp"
#include "bpnas/supernet.hpp"
#include "bpnas/tensor.hpp"
