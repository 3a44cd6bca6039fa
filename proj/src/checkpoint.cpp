#include "maunet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <vector>

namespace maunet {

namespace {

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

template <typename S>
constexpr std::uint8_t dtype_code() {
    return sizeof(S) == 4 ? 0 : 1;
}

template <typename S>
void put_scalar_le(std::vector<std::uint8_t>& out, S value) {
    if constexpr (sizeof(S) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &value, 4);
        put_u32_le(out, bits);
    } else {
        std::uint64_t bits;
        std::memcpy(&bits, &value, 8);
        put_u32_le(out, static_cast<std::uint32_t>(bits));
        put_u32_le(out, static_cast<std::uint32_t>(bits >> 32));
    }
}

class Reader {
  public:
    Reader(std::vector<std::uint8_t> bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    bool at_end() const { return pos_ == bytes_.size(); }

    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw CorruptionError("checkpoint: " + path_ + " is truncated at byte " +
                                  std::to_string(pos_));
        }
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8() { return *take(1); }

    std::uint32_t u32_le() {
        const std::uint8_t* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    std::uint64_t u64_le() {
        const std::uint64_t lo = u32_le();
        const std::uint64_t hi = u32_le();
        return lo | (hi << 32);
    }

  private:
    std::vector<std::uint8_t> bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("checkpoint: cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    const std::size_t got = std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (got != bytes.size()) throw IoError("checkpoint: short read from " + path);
    return bytes;
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError("checkpoint: cannot open " + tmp + " for writing");
    const std::size_t wrote = std::fwrite(bytes.data(), 1, bytes.size(), f);
    const bool flushed = std::fflush(f) == 0;
    std::fclose(f);
    if (wrote != bytes.size() || !flushed) {
        std::remove(tmp.c_str());
        throw IoError("checkpoint: short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        throw IoError("checkpoint: cannot rename " + tmp + " to " + path + ": " + ec.message());
    }
}

}  // namespace

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& params,
                     const RunConfig& config) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);

    const std::string config_text = serialize_run_config(config);
    put_u32_le(out, static_cast<std::uint32_t>(config_text.size()));
    out.insert(out.end(), config_text.begin(), config_text.end());

    for (const auto& entry : params.entries()) {
        put_u32_le(out, static_cast<std::uint32_t>(entry.name.size()));
        out.insert(out.end(), entry.name.begin(), entry.name.end());
        out.push_back(dtype_code<S>());
        out.push_back(static_cast<std::uint8_t>(entry.value.ndim()));
        for (int a = 0; a < entry.value.ndim(); ++a) {
            put_u32_le(out, static_cast<std::uint32_t>(entry.value.dim(a)));
        }
        for (std::size_t i = 0; i < entry.value.size(); ++i) {
            put_scalar_le(out, entry.value[i]);
        }
    }
    write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader reader(read_file(path), path);

    const std::uint8_t* magic = reader.take(8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw VersionError("checkpoint: " + path + " has magic '" +
                           std::string(reinterpret_cast<const char*>(magic), 8) +
                           "', expected 'MAUNET01'");
    }

    const std::uint32_t config_len = reader.u32_le();
    const std::uint8_t* config_bytes = reader.take(config_len);
    LoadedCheckpoint loaded{
        parse_run_config(std::string(reinterpret_cast<const char*>(config_bytes), config_len)),
        MaUnet<float>{}};
    loaded.model = build_model<float>(loaded.config.model, RngState(loaded.config.train.seed));

    std::vector<bool> filled(loaded.model.params.size(), false);
    while (!reader.at_end()) {
        const std::uint32_t name_len = reader.u32_le();
        const std::uint8_t* name_bytes = reader.take(name_len);
        const std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        const std::uint8_t dtype = reader.u8();
        if (dtype > 1) {
            throw CorruptionError("checkpoint: " + path + " record '" + name +
                                  "' has unknown dtype code " + std::to_string(dtype));
        }
        const std::uint8_t ndim = reader.u8();
        Shape dims(ndim);
        for (int a = 0; a < ndim; ++a) dims[static_cast<std::size_t>(a)] = static_cast<int>(reader.u32_le());

        std::vector<float> values(numel(dims));
        for (auto& v : values) {
            if (dtype == 0) {
                const std::uint32_t bits = reader.u32_le();
                float fv;
                std::memcpy(&fv, &bits, 4);
                v = fv;
            } else {
                const std::uint64_t bits = reader.u64_le();
                double dv;
                std::memcpy(&dv, &bits, 8);
                v = static_cast<float>(dv);
            }
        }

        const int idx = loaded.model.params.find(name);
        if (idx < 0) {
            throw IncompatibilityError("checkpoint: tensor '" + name +
                                       "' does not exist in the model built from the stored config");
        }
        auto& entry = loaded.model.params[idx];
        if (!same_shape(entry.value.shape(), dims)) {
            throw IncompatibilityError("checkpoint: tensor '" + name + "' has dims " +
                                       shape_str(dims) + ", model expects " +
                                       shape_str(entry.value.shape()));
        }
        if (filled[static_cast<std::size_t>(idx)]) {
            throw CorruptionError("checkpoint: tensor '" + name + "' appears twice in " + path);
        }
        entry.value = TensorF(dims, std::move(values));
        filled[static_cast<std::size_t>(idx)] = true;
    }
    for (std::size_t i = 0; i < filled.size(); ++i) {
        if (!filled[i]) {
            throw IncompatibilityError("checkpoint: tensor '" +
                                       loaded.model.params.entries()[i].name + "' is missing from " +
                                       path);
        }
    }
    return loaded;
}

template void save_checkpoint(const std::string&, const ParamStore<float>&, const RunConfig&);
template void save_checkpoint(const std::string&, const ParamStore<double>&, const RunConfig&);

}  // namespace maunet
