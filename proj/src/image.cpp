#include "wmlab/image.hpp"

#include "wmlab/resample.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace wmlab {

namespace {

constexpr double kYuv[3][3] = {
    {0.299, 0.587, 0.114},
    {-0.168735891647856, -0.331264108352144, 0.5},
    {0.5, -0.418687589158345, -0.081312410841655},
};

constexpr double kRgb[3][3] = {
    {1.0, 0.0, 1.402},
    {1.0, -0.344136286201022, -0.714136286201022},
    {1.0, 1.772, 0.0},
};

Tensor mix(const Tensor& x, const double (&m)[3][3])
{
    if (x.rank() != 4 || x.c() != 3) throw std::invalid_argument("colour transform: [N,3,H,W] expected");
    Tensor y(x.shape());
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    for (int s = 0; s < x.n(); ++s) {
        const double* src = x.data() + s * 3 * hw;
        double* dst = y.data() + s * 3 * hw;
        for (int o = 0; o < 3; ++o)
            for (std::size_t i = 0; i < hw; ++i)
                dst[o * hw + i] = m[o][0] * src[i] + m[o][1] * src[hw + i] + m[o][2] * src[2 * hw + i];
    }
    return y;
}

void check_dims(int h, int w)
{
    if (h < ImageBuffer::kMinSide || w < ImageBuffer::kMinSide) {
        throw ImageError("image must be at least " + std::to_string(ImageBuffer::kMinSide) + " pixels per side, got " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
}

cv::Mat to_mat8(const ImageBuffer& img)
{
    const int h = img.height(), w = img.width();
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                // OpenCV stores BGR
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
    }
    return m;
}

ImageBuffer from_mat(const cv::Mat& src)
{
    cv::Mat m;
    if (src.channels() == 1) {
        cv::cvtColor(src, m, cv::COLOR_GRAY2BGR);
    } else if (src.channels() == 4) {
        cv::cvtColor(src, m, cv::COLOR_BGRA2BGR);
    } else {
        m = src;
    }
    double levels = 255.0;
    if (m.depth() == CV_16U) {
        levels = 65535.0;
    } else if (m.depth() != CV_8U) {
        throw ImageError("unsupported pixel depth");
    }
    check_dims(m.rows, m.cols);
    ImageBuffer img(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = m.depth() == CV_8U ? m.at<cv::Vec3b>(y, x)[2 - c] : m.at<cv::Vec3w>(y, x)[2 - c];
                img.at(c, y, x) = v / levels; // same rounding as quantize8
            }
    return img;
}

} // namespace

ImageBuffer::ImageBuffer(int height, int width, double fill) : t_({1, 3, height, width}, fill)
{
    check_dims(height, width);
    if (fill < 0.0 || fill > 1.0) throw ImageError("fill value outside [0,1]");
}

ImageBuffer::ImageBuffer(Tensor t) : t_(std::move(t))
{
    if (t_.rank() != 4 || t_.n() != 1 || t_.c() != 3) throw ImageError("image tensor must be [1,3,H,W]");
    check_dims(t_.h(), t_.w());
    for (double v : t_.vec()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ImageError("image value outside [0,1]");
    }
}

ImageBuffer ImageBuffer::clamped(Tensor t)
{
    for (double& v : t.vec()) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    return ImageBuffer(std::move(t));
}

Rgb rgb_to_yuv(const Rgb& p)
{
    Rgb o{};
    for (int r = 0; r < 3; ++r) o[r] = kYuv[r][0] * p[0] + kYuv[r][1] * p[1] + kYuv[r][2] * p[2];
    return o;
}

Rgb yuv_to_rgb(const Rgb& p)
{
    Rgb o{};
    for (int r = 0; r < 3; ++r) o[r] = kRgb[r][0] * p[0] + kRgb[r][1] * p[1] + kRgb[r][2] * p[2];
    return o;
}

Tensor rgb_to_yuv(const Tensor& rgb) { return mix(rgb, kYuv); }
Tensor yuv_to_rgb(const Tensor& yuv) { return mix(yuv, kRgb); }

Tensor luma(const ImageBuffer& img)
{
    const int h = img.height(), w = img.width();
    Tensor y({1, 1, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const double* s = img.tensor().data();
    for (std::size_t i = 0; i < hw; ++i) y[i] = kYuv[0][0] * s[i] + kYuv[0][1] * s[hw + i] + kYuv[0][2] * s[2 * hw + i];
    return y;
}

ImageBuffer resize(const ImageBuffer& img, int new_height, int new_width)
{
    if (new_height == img.height() && new_width == img.width()) return img;
    const auto ay = bilinear_axis(img.height(), new_height);
    const auto ax = bilinear_axis(img.width(), new_width);
    return ImageBuffer::clamped(resample_apply(img.tensor(), ay, ax));
}

ImageBuffer quantize8(const ImageBuffer& img)
{
    Tensor t = img.tensor();
    for (double& v : t.vec()) v = std::round(v * 255.0) / 255.0;
    return ImageBuffer(std::move(t));
}

ImageBuffer load_image(const std::filesystem::path& path)
{
    if (!std::filesystem::is_regular_file(path)) throw ImageError("cannot read image: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (m.empty()) throw ImageError("unsupported or corrupt image: " + path.string());
    return from_mat(m);
}

SaveOptions options_for_path(const std::filesystem::path& path, int jpeg_quality)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".jpg" || ext == ".jpeg") return {ImageFormat::Jpeg, jpeg_quality};
    if (ext == ".png" || ext.empty()) return {ImageFormat::Png, jpeg_quality};
    throw ImageError("unsupported output format: " + ext);
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path, SaveOptions opts)
{
    const cv::Mat m = to_mat8(img);
    std::vector<int> params;
    std::vector<unsigned char> bytes;
    bool ok = false;
    if (opts.format == ImageFormat::Jpeg) {
        params = {cv::IMWRITE_JPEG_QUALITY, std::clamp(opts.jpeg_quality, 1, 100)};
        ok = cv::imencode(".jpg", m, bytes, params);
    } else {
        params = {cv::IMWRITE_PNG_COMPRESSION, 6};
        ok = cv::imencode(".png", m, bytes, params);
    }
    if (!ok) throw ImageError("image encoding failed");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError("cannot write image: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError("short write: " + path.string());
}

ImageBuffer jpeg_roundtrip(const ImageBuffer& img, int quality)
{
    std::vector<unsigned char> bytes;
    if (!cv::imencode(".jpg", to_mat8(img), bytes, {cv::IMWRITE_JPEG_QUALITY, std::clamp(quality, 1, 100)}))
        throw ImageError("jpeg encoding failed");
    return from_mat(cv::imdecode(bytes, cv::IMREAD_COLOR));
}

std::vector<NamedImage> load_image_dir(const std::filesystem::path& dir, std::ostream* warnings)
{
    if (!std::filesystem::is_directory(dir)) throw ImageError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<NamedImage> out;
    for (const auto& f : files) {
        try {
            out.push_back({f.filename().string(), load_image(f)});
        } catch (const std::exception& e) {
            if (warnings) *warnings << "warning: skipping " << f.string() << ": " << e.what() << '\n';
        }
    }
    return out;
}

} // namespace wmlab
