#include <cstdlib>
#include <new>

// Program-wide 64-byte-aligned allocation. Vectorized reduction loops split
// into peel/vector/tail by pointer alignment, so two buffers holding the
// same values can otherwise sum in different orders and drift in the last
// ulp. Pinning every allocation to one alignment class makes equal seeds
// give equal bits, which the distributed-training equivalence checks rely
// on.

namespace {

constexpr std::size_t kAlign = 64;

void* aligned_new(std::size_t n, std::size_t align) {
  if (align < kAlign) align = kAlign;
  if (n == 0) n = 1;
  const std::size_t padded = (n + align - 1) / align * align;
  return std::aligned_alloc(align, padded);
}

void* checked(std::size_t n, std::size_t align) {
  void* p = aligned_new(n, align);
  if (p == nullptr) throw std::bad_alloc();
  return p;
}

}  // namespace

void* operator new(std::size_t n) { return checked(n, kAlign); }
void* operator new[](std::size_t n) { return checked(n, kAlign); }
void* operator new(std::size_t n, std::align_val_t a) {
  return checked(n, static_cast<std::size_t>(a));
}
void* operator new[](std::size_t n, std::align_val_t a) {
  return checked(n, static_cast<std::size_t>(a));
}
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  return aligned_new(n, kAlign);
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept {
  return aligned_new(n, kAlign);
}
void* operator new(std::size_t n, std::align_val_t a, const std::nothrow_t&) noexcept {
  return aligned_new(n, static_cast<std::size_t>(a));
}
void* operator new[](std::size_t n, std::align_val_t a, const std::nothrow_t&) noexcept {
  return aligned_new(n, static_cast<std::size_t>(a));
}

void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete(void* p, std::align_val_t, const std::nothrow_t&) noexcept {
  std::free(p);
}
void operator delete[](void* p, std::align_val_t, const std::nothrow_t&) noexcept {
  std::free(p);
}
