// Copyright 2026 The msecnet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include "msecnet/ad/gradcheck.hpp"
#include "msecnet/ad/ops.hpp"
#include "msecnet/ad/parameters.hpp"
#include "msecnet/ad/tape.hpp"
#include "msecnet/ad/tensor.hpp"
#include "msecnet/backbone.hpp"
#include "msecnet/checks.hpp"
#include "msecnet/config.hpp"
#include "msecnet/data/io.hpp"
#include "msecnet/data/manifest.hpp"
#include "msecnet/data/synth.hpp"
#include "msecnet/error.hpp"
#include "msecnet/eval.hpp"
#include "msecnet/geom.hpp"
#include "msecnet/infer.hpp"
#include "msecnet/layers.hpp"
#include "msecnet/losses.hpp"
#include "msecnet/msec.hpp"
#include "msecnet/network.hpp"
#include "msecnet/optim.hpp"
#include "msecnet/run_config.hpp"
#include "msecnet/runtime.hpp"
#include "msecnet/structure.hpp"
#include "msecnet/train.hpp"
