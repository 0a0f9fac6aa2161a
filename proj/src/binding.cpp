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

#include "gpad/binding.hpp"

#include "gpad/error.hpp"

namespace gpad {

Binding::Binding(Tape& tape, ParamRefs params, bool differentiable)
    : tape_(&tape), params_(std::move(params)), differentiable_(differentiable)
{
    for (const Param* p : params_) {
        if (entries_.count(p) != 0) {
            throw ValueError("param '" + p->name() + "' listed twice");
        }
        Var u = differentiable_ && !p->fixed() ? ad::leaf(tape, p->unconstrained())
                                               : ad::constant(tape, p->unconstrained());
        entries_[p] = {u, ad::constrain(p->transform(), u)};
    }
}

const Binding::Entry& Binding::entry(const Param& p) const
{
    auto it = entries_.find(&p);
    if (it == entries_.end()) {
        throw ValueError("param '" + p.name() + "' is not bound on this tape");
    }
    return it->second;
}

Var Binding::operator[](const Param& p) const { return entry(p).constrained; }

Var Binding::unconstrained(const Param& p) const { return entry(p).unconstrained; }

std::vector<double> Binding::gradient(Var root) const
{
    std::vector<double> out;
    if (!differentiable_) {
        out.assign(free_size(params_), 0.0);
        return out;
    }
    std::vector<NodeId> ids;
    for (const Param* p : params_) {
        if (!p->fixed()) {
            ids.push_back(entry(*p).unconstrained.id());
        }
    }
    const auto grads = tape_->grad(root.id(), ids);
    out.reserve(free_size(params_));
    for (NodeId id : ids) {
        const auto v = grads.at(id).values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

Var Binding::log_prior() const
{
    Var total = ad::constant(*tape_, 0.0);
    for (const Param* p : params_) {
        if (!p->prior() || p->fixed()) {
            continue;
        }
        const Entry& e = entry(*p);
        total = total + ad::log_prior(*p->prior(), e.constrained) +
                ad::log_jacobian(p->transform(), e.unconstrained);
    }
    return total;
}

} // namespace gpad
