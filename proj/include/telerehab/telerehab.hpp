// Copyright 2026 The telerehab Authors
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

// Everything except the WebSocket server (gateway_ws.hpp), which pulls in Boost.

#pragma once

#include "telerehab/common.hpp"
#include "telerehab/control.hpp"
#include "telerehab/gateway.hpp"
#include "telerehab/harness.hpp"
#include "telerehab/kin2.hpp"
#include "telerehab/link.hpp"
#include "telerehab/plant.hpp"
#include "telerehab/traj.hpp"
