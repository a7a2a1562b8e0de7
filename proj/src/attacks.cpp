#include "wmlab/attacks.hpp"

#include "wmlab/resample.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace wmlab {

Residual extract_residual(const ImageBuffer& cover, const ImageBuffer& watermarked)
{
    if (cover.height() != watermarked.height() || cover.width() != watermarked.width())
        throw std::invalid_argument("extract_residual: images differ in size");
    Tensor r = watermarked.tensor();
    const Tensor& x = cover.tensor();
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] -= x[i];
    return Residual{std::move(r)};
}

ImageBuffer transplant(const Residual& r, const ImageBuffer& target)
{
    const Tensor& v = r.values;
    if (v.empty() || v.n() != 1 || v.c() != 3) throw std::invalid_argument("transplant: residual must be [1,3,H,W]");
    Tensor out = target.tensor();
    const Tensor sized = (v.h() == target.height() && v.w() == target.width())
                             ? v
                             : resample_apply(v, bilinear_axis(v.h(), target.height()),
                                              bilinear_axis(v.w(), target.width()));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sized[i];
    return ImageBuffer::clamped(std::move(out));
}

void to_json(nlohmann::json& j, const ForgeryReport& r)
{
    j = nlohmann::json{{"schema_version", r.schema_version},
                       {"seed", r.seed},
                       {"pairs", r.pairs},
                       {"canvas", r.canvas},
                       {"bit_accuracy",
                        {{"watermarked", r.watermarked},
                         {"residual_on_gray", r.residual_on_gray},
                         {"residual_on_target", r.residual_on_target}}}};
}

ForgeryReport forgery_eval(const WatermarkModel& model, const std::vector<ImageBuffer>& sources,
                           const std::vector<ImageBuffer>& targets, std::uint64_t seed)
{
    if (sources.empty() || targets.empty()) throw std::invalid_argument("forgery_eval: empty image set");
    const long count = static_cast<long>(sources.size());
    std::vector<std::array<double, 3>> acc(sources.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < count; ++i) {
        const ImageBuffer& x = sources[i];
        const WatermarkBits w = random_watermark(static_cast<std::size_t>(model.config().bit_length),
                                                 mix_seed(seed, static_cast<std::uint64_t>(i)));
        const ImageBuffer marked = quantize8(model.encode(x, w).watermarked);
        const Residual r = extract_residual(x, marked);
        auto score = [&](const ImageBuffer& y) {
            return bit_accuracy(WatermarkBits::from_probabilities(model.decode(y)), w);
        };
        acc[i] = {score(marked), score(transplant(r, ImageBuffer(x.height(), x.width(), kForgeryCanvas))),
                  score(transplant(r, targets[i % targets.size()]))};
    }
    ForgeryReport rep;
    rep.seed = seed;
    rep.pairs = static_cast<int>(count);
    for (const auto& a : acc) {
        rep.watermarked += a[0];
        rep.residual_on_gray += a[1];
        rep.residual_on_target += a[2];
    }
    rep.watermarked *= 100.0 / count;
    rep.residual_on_gray *= 100.0 / count;
    rep.residual_on_target *= 100.0 / count;
    return rep;
}

std::string format_forgery_table(const ForgeryReport& r)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "pairs " << r.pairs << "  seed " << r.seed << "  canvas " << r.canvas << '\n';
    os << std::setw(14) << "watermarked" << std::setw(14) << "residual" << std::setw(14) << "transplanted" << '\n';
    os << std::setw(14) << r.watermarked << std::setw(14) << r.residual_on_gray << std::setw(14)
       << r.residual_on_target << '\n';
    return os.str();
}

} // namespace wmlab
