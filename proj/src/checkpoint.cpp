#include <cstring>
#include <fstream>

#include "bldlab/data.hpp"

namespace bldlab {

namespace {

constexpr char kMagic[8] = {'B', 'L', 'D', 'L', 'A', 'B', '0', '1'};

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(reinterpret_cast<const char*>(p), n);
}

struct Reader {
    const std::string& bytes;
    size_t pos = 0;
    const std::string& path;

    template <class T>
    T get(const char* field) {
        if (pos + sizeof(T) > bytes.size())
            throw std::runtime_error("checkpoint: " + path + " truncated at " + field);
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_str(size_t n, const char* field) {
        if (pos + n > bytes.size())
            throw std::runtime_error("checkpoint: " + path + " truncated at " + field);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string out;
    put_bytes(out, kMagic, 8);
    put<uint32_t>(out, ck.version);
    put<uint32_t>(out, (uint32_t)ck.schedule_betas.size());
    for (double b : ck.schedule_betas) put<double>(out, b);
    put<uint32_t>(out, (uint32_t)ck.tensors.size());
    for (const auto& t : ck.tensors) {
        put<uint32_t>(out, (uint32_t)t.name.size());
        put_bytes(out, t.name.data(), t.name.size());
        put<uint8_t>(out, 0);  // dtype f32
        put<uint32_t>(out, (uint32_t)t.shape.size());
        for (int d : t.shape) put<uint32_t>(out, (uint32_t)d);
        put<uint64_t>(out, (uint64_t)t.data.size() * sizeof(float));
        put_bytes(out, t.data.data(), t.data.size() * sizeof(float));
    }
    put<uint32_t>(out, (uint32_t)ck.config.size());
    for (const auto& [k, v] : ck.config) {
        put<uint32_t>(out, (uint32_t)k.size());
        put_bytes(out, k.data(), k.size());
        put<uint32_t>(out, (uint32_t)v.size());
        put_bytes(out, v.data(), v.size());
    }
    put<uint64_t>(out, fnv1a(out));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), (std::streamsize)out.size());
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 + sizeof(uint64_t))
        throw std::runtime_error("checkpoint: " + path + " too short to be valid");

    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(uint64_t), sizeof(uint64_t));
    std::string body = bytes.substr(0, bytes.size() - sizeof(uint64_t));
    if (fnv1a(body) != stored)
        throw std::runtime_error("checkpoint: " + path + " checksum mismatch");

    Reader r{body, 0, path};
    std::string magic = r.get_str(8, "magic");
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: " + path + " has bad magic '" + magic + "'");
    Checkpoint ck;
    ck.version = r.get<uint32_t>("version");
    if (ck.version != 1)
        throw std::runtime_error("checkpoint: " + path + " has unsupported version " +
                                 std::to_string(ck.version));
    uint32_t t_count = r.get<uint32_t>("schedule length");
    ck.schedule_betas.resize(t_count);
    for (uint32_t i = 0; i < t_count; ++i) ck.schedule_betas[i] = r.get<double>("beta");
    uint32_t n_tensors = r.get<uint32_t>("tensor count");
    for (uint32_t i = 0; i < n_tensors; ++i) {
        TensorRecord rec;
        uint32_t name_len = r.get<uint32_t>("tensor name length");
        rec.name = r.get_str(name_len, "tensor name");
        uint8_t dtype = r.get<uint8_t>("dtype");
        if (dtype != 0)
            throw std::runtime_error("checkpoint: " + path + " tensor '" + rec.name +
                                     "' has unsupported dtype " + std::to_string(dtype));
        uint32_t ndim = r.get<uint32_t>("rank");
        int64_t count = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            rec.shape.push_back((int)r.get<uint32_t>("dim"));
            count *= rec.shape.back();
        }
        uint64_t nbytes = r.get<uint64_t>("tensor bytes");
        if (nbytes != (uint64_t)count * sizeof(float))
            throw std::runtime_error("checkpoint: " + path + " tensor '" + rec.name +
                                     "' byte length disagrees with shape " +
                                     shape_str(rec.shape));
        std::string raw = r.get_str(nbytes, "tensor data");
        rec.data.resize(count);
        std::memcpy(rec.data.data(), raw.data(), nbytes);
        ck.tensors.push_back(std::move(rec));
    }
    uint32_t n_config = r.get<uint32_t>("config count");
    for (uint32_t i = 0; i < n_config; ++i) {
        uint32_t klen = r.get<uint32_t>("config key length");
        std::string k = r.get_str(klen, "config key");
        uint32_t vlen = r.get<uint32_t>("config value length");
        ck.config[k] = r.get_str(vlen, "config value");
    }
    if (r.pos != body.size())
        throw std::runtime_error("checkpoint: " + path + " has trailing bytes");
    return ck;
}

Checkpoint checkpoint_from_params(const ParameterSet<float>& params,
                                  const NoiseSchedule* schedule,
                                  std::map<std::string, std::string> config) {
    Checkpoint ck;
    if (schedule) ck.schedule_betas = schedule->betas();
    for (const auto& [name, t] : params)
        ck.tensors.push_back({name, t.shape(), t.data()});
    ck.config = std::move(config);
    return ck;
}

void assign_params_from_checkpoint(ParameterSet<float>& params, const Checkpoint& ck) {
    size_t assigned = 0;
    for (const auto& rec : ck.tensors) {
        Tensor<float>* t = params.find(rec.name);
        if (!t)
            throw std::runtime_error("checkpoint: tensor '" + rec.name +
                                     "' has no matching model parameter");
        if (t->shape() != rec.shape)
            throw std::runtime_error("checkpoint: tensor '" + rec.name + "' shape " +
                                     shape_str(rec.shape) + " does not match model shape " +
                                     shape_str(t->shape()));
        t->data() = rec.data;
        ++assigned;
    }
    if (assigned != params.size())
        throw std::runtime_error("checkpoint: stores " + std::to_string(assigned) +
                                 " tensors but the model has " +
                                 std::to_string(params.size()));
}

int config_int(const Checkpoint& ck, const std::string& key) {
    auto it = ck.config.find(key);
    if (it == ck.config.end())
        throw std::runtime_error("checkpoint: missing config key '" + key + "'");
    return std::stoi(it->second);
}

double config_double(const Checkpoint& ck, const std::string& key) {
    auto it = ck.config.find(key);
    if (it == ck.config.end())
        throw std::runtime_error("checkpoint: missing config key '" + key + "'");
    return std::stod(it->second);
}

std::string config_str(const Checkpoint& ck, const std::string& key) {
    auto it = ck.config.find(key);
    if (it == ck.config.end())
        throw std::runtime_error("checkpoint: missing config key '" + key + "'");
    return it->second;
}

}  // namespace bldlab
