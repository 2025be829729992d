#include "priormoe/tape.hpp"

#include <stdexcept>

namespace priormoe::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Var& root) {
    if (!root.defined() || root.value().numel() != 1) {
        throw std::invalid_argument("Tape::backward: root must be a defined scalar");
    }
    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        (*it)();
    }
    clear();
}

TapeScope::TapeScope(Tape& tape) {
    previous_ = g_active_tape;
    g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

}  // namespace priormoe::ad
