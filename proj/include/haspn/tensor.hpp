#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <memory>
#include <new>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "haspn/error.hpp"

namespace haspn {

namespace detail {

// Leaves trivially constructible elements uninitialized on resize and
// aligns every block to a cache line. Eigen picks its vectorization peel
// from pointer alignment, so a fixed alignment keeps results bitwise
// reproducible from run to run.
template <class T>
struct default_init_allocator : std::allocator<T> {
  static constexpr std::align_val_t kAlign{64};

  template <class U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  using std::allocator<T>::allocator;

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

// Dense (batch, channel, height, width) array, row-major.
template <class T>
class Tensor4 {
 public:
  using value_type = T;
  using Storage = std::vector<T, detail::default_init_allocator<T>>;

  Tensor4() = default;

  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    if (!shape.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
    data_.assign(shape.numel(), fill);
  }

  Tensor4(Shape4 shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    if (!shape.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
    if (data_.size() != shape.numel()) throw ShapeError("tensor data length does not match " + to_string(shape));
  }

  // Contents are indeterminate; callers must overwrite every element.
  static Tensor4 uninitialized(Shape4 shape) {
    if (!shape.valid()) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
    Tensor4 t;
    t.shape_ = shape;
    t.data_.resize(shape.numel());
    return t;
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor4<U> cast() const {
    if (data_.empty()) return Tensor4<U>();
    auto out = Tensor4<U>::uninitialized(shape_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_{};
  Storage data_;
};

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace haspn
