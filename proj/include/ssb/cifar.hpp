#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "ssb/tensor.hpp"

// CIFAR-10 binary batches: 10000 records of 1 label byte + 3072 pixel bytes
// (3 channel planes of 32x32). Images come out as [N,32,32,3] floats in
// [0,1], normalized per channel afterwards by the training code.

namespace ssb {

struct Dataset {
    Tensor<float> images;  // [N,32,32,3]
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

namespace detail {

constexpr std::size_t kCifarRecord = 3073;

inline void load_cifar_batch(const std::string& path, std::vector<float>& pixels,
                             std::vector<int>& labels) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw data_error("cannot open '" + path + "'");
    const std::streamoff bytes = is.tellg();
    if (bytes == 0 || bytes % static_cast<std::streamoff>(kCifarRecord) != 0)
        throw data_error("'" + path + "': size " + std::to_string(bytes) +
                         " is not a multiple of the 3073-byte record; trailing partial record at "
                         "offset " +
                         std::to_string(bytes - bytes % static_cast<std::streamoff>(kCifarRecord)));
    const std::size_t count = static_cast<std::size_t>(bytes) / kCifarRecord;
    is.seekg(0);

    pixels.reserve(pixels.size() + count * 3072);
    labels.reserve(labels.size() + count);
    std::vector<unsigned char> rec(kCifarRecord);
    for (std::size_t n = 0; n < count; ++n) {
        is.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(kCifarRecord));
        if (!is)
            throw data_error("'" + path + "': truncated record at offset " +
                             std::to_string(n * kCifarRecord));
        if (rec[0] > 9)
            throw data_error("'" + path + "': label " + std::to_string(rec[0]) +
                             " out of range at offset " + std::to_string(n * kCifarRecord));
        labels.push_back(rec[0]);
        // stored channel-planar, converted to H,W,C
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    pixels.push_back(static_cast<float>(rec[1 + c * 1024 + y * 32 + x]) / 255.0f);
    }
}

inline Dataset dataset_from(std::vector<float> pixels, std::vector<int> labels) {
    Dataset ds;
    ds.labels = std::move(labels);
    ds.images = Tensor<float>({ds.labels.size(), 32, 32, 3}, std::move(pixels));
    return ds;
}

}  // namespace detail

inline Dataset load_cifar_train(const std::string& dir) {
    std::vector<float> pixels;
    std::vector<int> labels;
    for (int i = 1; i <= 5; ++i)
        detail::load_cifar_batch(dir + "/data_batch_" + std::to_string(i) + ".bin", pixels,
                                 labels);
    return detail::dataset_from(std::move(pixels), std::move(labels));
}

inline Dataset load_cifar_test(const std::string& dir) {
    std::vector<float> pixels;
    std::vector<int> labels;
    detail::load_cifar_batch(dir + "/test_batch.bin", pixels, labels);
    return detail::dataset_from(std::move(pixels), std::move(labels));
}

// Channel statistics of the standard CIFAR-10 train split.
inline const float kCifarMean[3] = {0.4914f, 0.4822f, 0.4465f};
inline const float kCifarStd[3] = {0.2470f, 0.2435f, 0.2616f};

inline void normalize_inplace(Tensor<float>& images) {
    const std::size_t n = images.numel() / 3;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            images.data[i * 3 + c] = (images.data[i * 3 + c] - kCifarMean[c]) / kCifarStd[c];
}

}  // namespace ssb
