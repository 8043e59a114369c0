#pragma once

#include <cstddef>

// Heap accounting. The counters live in the library; they only move when an
// executable links the difformer_memtrack object, which replaces the global
// operator new/delete.
namespace difformer::memtrack {

bool installed() noexcept;
std::size_t current_bytes() noexcept;
std::size_t peak_bytes() noexcept;
/// Sets the peak to the current live byte count.
void reset_peak() noexcept;

namespace detail {
void on_alloc(std::size_t bytes) noexcept;
void on_free(std::size_t bytes) noexcept;
void mark_installed() noexcept;
}  // namespace detail

}  // namespace difformer::memtrack
