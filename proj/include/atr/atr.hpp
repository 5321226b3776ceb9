// Copyright 2026 The atr Authors.
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

#include "atr/array.hpp"
#include "atr/autodiff.hpp"
#include "atr/alignment.hpp"
#include "atr/batching.hpp"
#include "atr/checkpoint.hpp"
#include "atr/dataset.hpp"
#include "atr/embedding_io.hpp"
#include "atr/error.hpp"
#include "atr/evaluation.hpp"
#include "atr/gradcheck.hpp"
#include "atr/gradcheck_suite.hpp"
#include "atr/loss.hpp"
#include "atr/model.hpp"
#include "atr/params.hpp"
#include "atr/pooling.hpp"
#include "atr/trainer.hpp"
