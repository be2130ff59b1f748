#include "svp/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace svp {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'L', 'I', 'M', 'G', '1', '\0'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("tensor record: truncated stream");
    return v;
}

}  // namespace

void write_tensor_record(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 8);
    write_pod<uint32_t>(os, 0);  // f64
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod<uint64_t>(os, t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!os) throw IoError("tensor record: write failed");
}

Tensor read_tensor_record(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("tensor record: bad magic");
    uint32_t dtype = read_pod<uint32_t>(is);
    if (dtype != 0) throw IoError("tensor record: unsupported dtype");
    uint32_t rank = read_pod<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError("tensor record: truncated payload");
    return t;
}

void write_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_tensor_record(os, t);
}

Tensor read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return read_tensor_record(is);
}

void write_pgm(const std::string& path, const Tensor& plane, double lo, double hi) {
    check(plane.rank() >= 2, "write_pgm: needs spatial axes");
    int64_t w = plane.dim(plane.rank() - 1);
    int64_t h = plane.size() / w;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    const double* p = plane.data();
    double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    for (int64_t i = 0; i < h * w; ++i) {
        double v = (std::min(std::max(p[i], lo), hi) - lo) * scale;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
    }
    if (!os) throw IoError("write failed: " + path);
}

void write_instance_ppm(const std::string& path, const Tensor& ids) {
    check(ids.rank() >= 2, "write_instance_ppm: needs spatial axes");
    int64_t w = ids.dim(ids.rank() - 1);
    int64_t h = ids.size() / w;
    // fixed palette, cycled for ids above its length
    static const unsigned char palette[][3] = {
        {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
        {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
        {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    const double* p = ids.data();
    for (int64_t i = 0; i < h * w; ++i) {
        long id = std::lround(p[i]);
        if (id <= 0) {
            os.put(0).put(0).put(0);
        } else {
            const unsigned char* c = palette[(id - 1) % 12];
            os.put(static_cast<char>(c[0]))
                .put(static_cast<char>(c[1]))
                .put(static_cast<char>(c[2]));
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

Tensor tile_frames(const std::vector<Tensor>& frames, int64_t channel) {
    check(!frames.empty(), "tile_frames: no frames");
    int64_t h = frames[0].dim(1), w = frames[0].dim(2);
    int64_t n = static_cast<int64_t>(frames.size());
    Tensor out({h, n * w});
    for (int64_t f = 0; f < n; ++f) {
        check(frames[f].dim(1) == h && frames[f].dim(2) == w,
              "tile_frames: frame extents differ");
        const double* src = frames[f].data() + channel * h * w;
        for (int64_t y = 0; y < h; ++y)
            std::copy(src + y * w, src + (y + 1) * w,
                      out.data() + y * n * w + f * w);
    }
    return out;
}

}  // namespace svp
