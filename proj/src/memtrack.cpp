#include <malloc.h>

#include <cstdlib>
#include <new>

#include "difformer/memtrack.hpp"

namespace {

struct Installer {
    Installer() { difformer::memtrack::detail::mark_installed(); }
} const g_installer;

void* tracked_alloc(std::size_t n) {
    void* p = std::malloc(n == 0 ? 1 : n);
    if (!p) throw std::bad_alloc();
    difformer::memtrack::detail::on_alloc(malloc_usable_size(p));
    return p;
}

void tracked_free(void* p) noexcept {
    if (!p) return;
    difformer::memtrack::detail::on_free(malloc_usable_size(p));
    std::free(p);
}

}  // namespace

void* operator new(std::size_t n) { return tracked_alloc(n); }
void* operator new[](std::size_t n) { return tracked_alloc(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
    try {
        return tracked_alloc(n);
    } catch (...) {
        return nullptr;
    }
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept {
    try {
        return tracked_alloc(n);
    } catch (...) {
        return nullptr;
    }
}
void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
