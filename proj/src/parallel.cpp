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

#include "gpad/parallel.hpp"

#include "gpad/error.hpp"

#include <algorithm>

namespace gpad {

namespace {

constexpr std::size_t min_parallel_work = 1 << 15;

std::pair<std::size_t, std::size_t> chunk(std::size_t n, std::size_t parts, std::size_t k)
{
    const std::size_t base = n / parts;
    const std::size_t extra = n % parts;
    const std::size_t begin = k * base + std::min(k, extra);
    return {begin, begin + base + (k < extra ? 1 : 0)};
}

} // namespace

WorkerPool::WorkerPool(std::size_t threads)
{
    if (threads == 0) {
        throw ValueError("worker pool needs at least one thread");
    }
    workers_.reserve(threads - 1);
    for (std::size_t i = 1; i < threads; ++i) {
        workers_.emplace_back([this, i] { worker_loop(i); });
    }
}

WorkerPool::~WorkerPool()
{
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    for (auto& w : workers_) {
        w.join();
    }
}

void WorkerPool::worker_loop(std::size_t index)
{
    std::size_t seen = 0;
    for (;;) {
        const std::function<void(std::size_t, std::size_t)>* job = nullptr;
        std::size_t n = 0;
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) {
                return;
            }
            seen = generation_;
            job = job_;
            n = job_size_;
        }
        const auto [begin, end] = chunk(n, threads(), index);
        std::exception_ptr err;
        if (begin < end) {
            try {
                (*job)(begin, end);
            } catch (...) {
                err = std::current_exception();
            }
        }
        {
            std::lock_guard lock(mutex_);
            if (err && !error_) {
                error_ = err;
            }
            if (--pending_ == 0) {
                done_.notify_one();
            }
        }
    }
}

void WorkerPool::parallel_for(std::size_t n,
                              const std::function<void(std::size_t, std::size_t)>& fn)
{
    if (n == 0) {
        return;
    }
    if (workers_.empty()) {
        fn(0, n);
        return;
    }
    std::lock_guard submit(submit_);
    {
        std::lock_guard lock(mutex_);
        job_ = &fn;
        job_size_ = n;
        pending_ = workers_.size();
        error_ = nullptr;
        ++generation_;
    }
    wake_.notify_all();

    std::exception_ptr err;
    const auto [begin, end] = chunk(n, threads(), 0);
    if (begin < end) {
        try {
            fn(begin, end);
        } catch (...) {
            err = std::current_exception();
        }
    }
    std::unique_lock lock(mutex_);
    done_.wait(lock, [&] { return pending_ == 0; });
    job_ = nullptr;
    if (!err) {
        err = error_;
    }
    if (err) {
        std::rethrow_exception(err);
    }
}

void parallel_for(WorkerPool* pool, std::size_t n, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& fn)
{
    if (pool == nullptr || pool->threads() == 1 || n < 2 || n * work_per_item < min_parallel_work) {
        fn(0, n);
        return;
    }
    pool->parallel_for(n, fn);
}

} // namespace gpad
