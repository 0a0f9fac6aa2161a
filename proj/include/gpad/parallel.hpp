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

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gpad {

/// Fixed set of worker threads executing blocking parallel loops.
///
/// A loop over [0, n) is cut into contiguous chunks, one per thread. Work items
/// never share output, so results do not depend on the thread count.
/// Concurrent callers are serialized.
class WorkerPool {
  public:
    explicit WorkerPool(std::size_t threads);
    ~WorkerPool();

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    std::size_t threads() const { return workers_.size() + 1; }

    /// Calls fn(begin, end) over disjoint chunks covering [0, n).
    void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

  private:
    void worker_loop(std::size_t index);

    std::vector<std::thread> workers_;
    std::mutex submit_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
    std::size_t job_size_ = 0;
    std::size_t generation_ = 0;
    std::size_t pending_ = 0;
    std::exception_ptr error_;
    bool stop_ = false;
};

/// Runs fn over [0, n), in parallel when a pool is given and the work is large.
void parallel_for(WorkerPool* pool, std::size_t n, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace gpad
