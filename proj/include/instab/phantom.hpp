#pragma once

#include "instab/tensor.hpp"

#include <cstdint>
#include <string>

namespace instab {

enum class PhantomKind { shepp_logan, random_ellipses, texture };

std::string to_string(PhantomKind kind);
PhantomKind phantom_kind_from_string(const std::string& name);

/// Image of shape [1, size, size] with intensities on [0,1]. `seed` is
/// ignored for the Shepp-Logan phantom.
Tensor make_phantom(PhantomKind kind, std::size_t size, std::uint64_t seed = 0);

/// Disk of radius `radius` pixels centred on the grid, anti-aliased by
/// `supersample`^2 point samples per pixel.
Tensor make_disk(std::size_t size, double radius, std::size_t supersample = 8);

} // namespace instab
