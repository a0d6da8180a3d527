// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace propnet {

/// Number of worker threads used by the kernels. Defaults to 1, which is the
/// bit-reproducible single-worker mode.
std::size_t worker_count();
void set_worker_count(std::size_t n);

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; callers
/// must only write to per-index state so results do not depend on the split.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace propnet
