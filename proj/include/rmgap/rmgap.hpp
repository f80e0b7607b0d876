// Copyright 2026 The rmgap Authors
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

#include "rmgap/dataset.hpp"
#include "rmgap/dynamics.hpp"
#include "rmgap/errors.hpp"
#include "rmgap/io.hpp"
#include "rmgap/linalg.hpp"
#include "rmgap/metrics.hpp"
#include "rmgap/random.hpp"
#include "rmgap/rewards.hpp"
#include "rmgap/seqmodel.hpp"
#include "rmgap/tasks.hpp"
#include "rmgap/theory.hpp"
#include "rmgap/training.hpp"
