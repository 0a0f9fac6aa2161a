// Copyright 2026 The gpad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include "gpad/adgraph.hpp"
#include "gpad/param.hpp"

#include <map>
#include <vector>

namespace gpad {

/// Places a list of params on a tape. Free params become leaves holding the
/// unconstrained value; fixed params (or every param, when not
/// differentiable) become constants.
class Binding {
  public:
    Binding(Tape& tape, ParamRefs params, bool differentiable = true);

    Tape& tape() const { return *tape_; }
    const ParamRefs& params() const { return params_; }

    /// Constrained value of p on the tape.
    Var operator[](const Param& p) const;
    Var unconstrained(const Param& p) const;

    /// Gradient of a 1x1 root with respect to the free state, in free_state order.
    std::vector<double> gradient(Var root) const;

    /// Sum of log prior densities plus transform log-Jacobians over params
    /// that carry a prior and are free. Zero when no such param exists.
    Var log_prior() const;

  private:
    struct Entry {
        Var unconstrained;
        Var constrained;
    };
    const Entry& entry(const Param& p) const;

    Tape* tape_;
    ParamRefs params_;
    bool differentiable_;
    std::map<const Param*, Entry> entries_;
};

} // namespace gpad
