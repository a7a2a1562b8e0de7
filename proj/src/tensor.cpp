#include "wmlab/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace wmlab {

std::string shape_str(const Shape& s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s)
{
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (data_.size() != shape_numel(shape_)) {
        throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::reshaped(Shape s) const
{
    if (shape_numel(s) != numel()) {
        throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::sample(int i) const
{
    const std::size_t per = numel() / static_cast<std::size_t>(shape_.at(0));
    Shape s = shape_;
    s[0] = 1;
    std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(per * i),
                          data_.begin() + static_cast<std::ptrdiff_t>(per * (i + 1)));
    return Tensor(std::move(s), std::move(d));
}

} // namespace wmlab
