#include "raaf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "raaf/errors.hpp"

namespace raaf {

namespace {

constexpr char kMagic[] = {'R', 'A', 'A', 'F', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

bool get_u64(std::istream& is, std::uint64_t& out) {
    char buf[8];
    is.read(buf, 8);
    if (is.gcount() != 8) return false;
    out = 0;
    for (int i = 0; i < 8; ++i) {
        out |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    }
    return true;
}

double get_f64(std::istream& is) {
    std::uint64_t v = 0;
    if (!get_u64(is, v)) throw DataError("checkpoint: truncated value block");
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<const ParamSlot*>& slots) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    for (const ParamSlot* slot : slots) {
        put_u64(os, slot->name.size());
        os.write(slot->name.data(), static_cast<std::streamsize>(slot->name.size()));
        put_u64(os, slot->value.rank());
        for (std::size_t d : slot->value.shape) put_u64(os, d);
        for (double v : slot->value.data) put_f64(os, v);
    }
    if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

std::vector<RawSlot> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(kMagic));
    if (is.gcount() != sizeof(kMagic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint: bad magic in '" + path + "'");
    }

    std::vector<RawSlot> out;
    std::uint64_t name_len = 0;
    while (get_u64(is, name_len)) {
        RawSlot slot;
        slot.name.resize(name_len);
        is.read(slot.name.data(), static_cast<std::streamsize>(name_len));
        if (is.gcount() != static_cast<std::streamsize>(name_len)) {
            throw DataError("checkpoint: truncated name record");
        }
        std::uint64_t rank = 0;
        if (!get_u64(is, rank)) throw DataError("checkpoint: truncated rank record");
        if (rank > 16) throw DataError("checkpoint: implausible tensor rank");
        std::vector<std::size_t> dims(rank);
        std::size_t n = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            std::uint64_t d = 0;
            if (!get_u64(is, d)) throw DataError("checkpoint: truncated dims record");
            if (d == 0 || d > (1ULL << 32)) throw DataError("checkpoint: implausible dimension");
            dims[i] = static_cast<std::size_t>(d);
            n *= dims[i];
        }
        slot.value = Tensor(std::move(dims));
        for (std::size_t i = 0; i < n; ++i) slot.value.data[i] = get_f64(is);
        out.push_back(std::move(slot));
    }
    return out;
}

void load_checkpoint(const std::string& path, const std::vector<ParamSlot*>& slots) {
    std::vector<RawSlot> raw = read_checkpoint(path);
    std::map<std::string, RawSlot*> by_name;
    for (RawSlot& r : raw) {
        if (!by_name.emplace(r.name, &r).second) {
            throw DataError("checkpoint: duplicate slot '" + r.name + "'");
        }
    }
    if (raw.size() != slots.size()) {
        throw ConfigError("checkpoint: file holds " + std::to_string(raw.size()) +
                          " slots, model expects " + std::to_string(slots.size()));
    }
    for (ParamSlot* slot : slots) {
        auto it = by_name.find(slot->name);
        if (it == by_name.end()) {
            throw ConfigError("checkpoint: missing slot '" + slot->name + "'");
        }
        if (it->second->value.shape != slot->value.shape) {
            throw ConfigError("checkpoint: shape mismatch for slot '" + slot->name + "'");
        }
        slot->value = std::move(it->second->value);
    }
}

}  // namespace raaf
