#include "srn/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include <jpeglib.h>

namespace srn {
namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  SRN_CHECK(f != nullptr, ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

Image read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  SRN_CHECK(png != nullptr, ErrorCode::kIo, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw Error(ErrorCode::kIo, "corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Image img(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.px(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

Image read_jpeg(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr c) { std::longjmp(reinterpret_cast<JpegError*>(c->err)->jump, 1); };
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kIo, "corrupt JPEG: " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  Image img(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.px(0, static_cast<int>(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                   const uint8_t* data) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  SRN_CHECK(png != nullptr, ErrorCode::kIo, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error(ErrorCode::kIo, "PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(data + static_cast<size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw Error(ErrorCode::kIo, "unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& img) {
  SRN_CHECK(!img.empty(), ErrorCode::kEmptyInput, "cannot write an empty image");
  write_png_raw(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 3, img.pixels.data());
}

void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<uint8_t>& values) {
  SRN_CHECK(values.size() == static_cast<size_t>(width) * height, ErrorCode::kShapeMismatch, "pgm size");
  std::ofstream out(path, std::ios::binary);
  SRN_CHECK(out.good(), ErrorCode::kIo, "cannot open " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size()));
}

double context_side(const BBox& box) {
  const double w = box.width(), h = box.height();
  const double p = 0.5 * (w + h);
  return std::sqrt((w + p) * (h + p));
}

Patch crop_patch(const Image& frame, double cx, double cy, double side, int out_size) {
  SRN_CHECK(!frame.empty(), ErrorCode::kEmptyInput, "crop from an empty frame");
  SRN_CHECK(side > 0 && std::isfinite(side), ErrorCode::kInvalidArgument, "crop side must be positive");
  std::array<double, 3> mean{0, 0, 0};
  const size_t npx = static_cast<size_t>(frame.width) * frame.height;
  for (size_t i = 0; i < npx; ++i)
    for (int c = 0; c < 3; ++c) mean[c] += frame.pixels[i * 3 + c];
  for (auto& m : mean) m /= (255.0 * static_cast<double>(npx));

  Patch p;
  p.size = out_size;
  p.scale = out_size / side;
  p.center_x = cx;
  p.center_y = cy;
  p.pixels = Tensor<float>({3, out_size, out_size});
  const size_t plane = static_cast<size_t>(out_size) * out_size;

  // Window [cx - side/2, cx + side/2] against the frame [0, W] x [0, H].
  const double half = 0.5 * side;
  p.outside_frame = cx + half <= 0 || cx - half >= frame.width || cy + half <= 0 || cy - half >= frame.height;

  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < frame.width && y < frame.height; };
  for (int py = 0; py < out_size; ++py) {
    // continuous frame coordinate of the patch pixel center, in index space
    const double fy = p.to_frame_y(py + 0.5) - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double ty = fy - y0;
    for (int px = 0; px < out_size; ++px) {
      const double fx = p.to_frame_x(px + 0.5) - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double tx = fx - x0;
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const double wt[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
      double acc[3] = {0, 0, 0};
      for (int k = 0; k < 4; ++k) {
        if (wt[k] == 0.0) continue;
        const bool in = inside(xs[k], ys[k]);
        if (!in) p.padded = true;
        for (int c = 0; c < 3; ++c) acc[c] += wt[k] * (in ? frame.px(xs[k], ys[k])[c] / 255.0 : mean[c]);
      }
      for (int c = 0; c < 3; ++c)
        p.pixels[c * plane + static_cast<size_t>(py) * out_size + px] = static_cast<float>(acc[c]);
    }
  }
  return p;
}

Patch crop_template(const Image& frame, const BBox& box) {
  SRN_CHECK(!frame.empty(), ErrorCode::kEmptyInput, "crop from an empty frame");
  return crop_patch(frame, box.cx(), box.cy(), context_side(box), kTemplateSize);
}

Patch crop_search(const Image& frame, const BBox& prev_box) {
  SRN_CHECK(!frame.empty(), ErrorCode::kEmptyInput, "crop from an empty frame");
  const double side = context_side(prev_box) * kSearchSize / static_cast<double>(kTemplateSize);
  return crop_patch(frame, prev_box.cx(), prev_box.cy(), side, kSearchSize);
}

}  // namespace srn
