#include "longembed/checkpoint.hpp"

#include <fstream>
#include <map>

#include "longembed/io.hpp"

namespace longembed {

namespace {
constexpr char kCheckpointMagic[4] = {'J', 'B', 'R', 'T'};
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t.tensor;
    }
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header = {{"format", "longembed-checkpoint"},
                             {"config", ckpt.model_config},
                             {"vocab", ckpt.vocab},
                             {"step", ckpt.step},
                             {"seed", ckpt.seed},
                             {"rng_state", ckpt.rng_state},
                             {"extra", ckpt.extra}};
    const std::string header_text = header.dump();
    for (const auto& t : ckpt.tensors) {
        if (t.name.size() > 0xFFFF) throw std::invalid_argument("tensor name too long: " + t.name.substr(0, 64));
        if (t.tensor.rank() > 0xFF) throw std::invalid_argument("tensor rank too large: " + t.name);
    }
    write_file_atomic(path, [&](std::ostream& os) {
        le::put_bytes(os, kCheckpointMagic, 4);
        le::put_u32(os, ckpt.version);
        le::put_u64(os, header_text.size());
        le::put_bytes(os, header_text.data(), header_text.size());
        le::put_u64(os, ckpt.tensors.size());
        for (const auto& [name, tensor] : ckpt.tensors) {
            le::put_u16(os, static_cast<std::uint16_t>(name.size()));
            le::put_bytes(os, name.data(), name.size());
            le::put_u8(os, static_cast<std::uint8_t>(tensor.dtype()));
            le::put_u8(os, static_cast<std::uint8_t>(tensor.rank()));
            for (auto e : tensor.shape()) le::put_u64(os, e);
            dispatch(tensor.dtype(), [&]<typename T>() {
                for (T v : tensor.data<T>()) {
                    if constexpr (std::is_same_v<T, float>) le::put_f32(os, v);
                    else le::put_f64(os, v);
                }
            });
        }
    });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    try {
        if (le::get_string(in, 4) != std::string(kCheckpointMagic, 4)) {
            throw DataError(path.string() + ": not a checkpoint (bad magic)");
        }
        Checkpoint ckpt;
        ckpt.version = le::get_u32(in);
        if (ckpt.version != kCheckpointVersion) {
            throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(ckpt.version));
        }
        const auto header_len = le::get_u64(in);
        const auto header = nlohmann::json::parse(le::get_string(in, header_len), nullptr, false);
        if (header.is_discarded() || !header.is_object()) throw DataError(path.string() + ": corrupt header");
        ckpt.model_config = header.at("config").get<ModelConfig>();
        ckpt.vocab = header.at("vocab").get<std::vector<std::string>>();
        ckpt.step = header.at("step").get<std::uint64_t>();
        ckpt.seed = header.at("seed").get<std::uint64_t>();
        ckpt.rng_state = header.at("rng_state").get<std::string>();
        ckpt.extra = header.at("extra");

        const auto count = le::get_u64(in);
        for (std::uint64_t i = 0; i < count; ++i) {
            NamedTensor nt;
            nt.name = le::get_string(in, le::get_u16(in));
            const auto dtype_code = le::get_u8(in);
            if (dtype_code > 1) throw DataError(path.string() + ": tensor " + nt.name + " has unknown dtype");
            const auto dtype = static_cast<DType>(dtype_code);
            Shape shape(le::get_u8(in));
            for (auto& e : shape) e = le::get_u64(in);
            nt.tensor = Tensor::zeros(shape, dtype);
            dispatch(dtype, [&]<typename T>() {
                for (T& v : nt.tensor.data<T>()) {
                    if constexpr (std::is_same_v<T, float>) v = le::get_f32(in);
                    else v = le::get_f64(in);
                }
            });
            ckpt.tensors.push_back(std::move(nt));
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
    } catch (const ShapeError& e) {
        throw DataError(path.string() + ": malformed tensor table (" + e.what() + ")");
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Checkpoint checkpoint_from_model(const EncoderState& state, const std::vector<std::string>& vocab) {
    Checkpoint ckpt;
    ckpt.model_config = state.config;
    ckpt.vocab = vocab;
    for (const auto& p : state.named_parameters()) ckpt.tensors.push_back({p.name, p.tensor.detach()});
    return ckpt;
}

EncoderState model_from_checkpoint(const Checkpoint& ckpt) {
    EncoderState state;
    {
        // Only the structure matters; values are overwritten below.
        ModelConfig shell = ckpt.model_config;
        shell.validate();
        state = init_model(shell, 0);
    }
    for (auto& p : state.named_parameters()) {
        const Tensor* saved = ckpt.find(p.name);
        if (saved == nullptr) throw DataError("checkpoint lacks tensor " + p.name);
        if (saved->shape() != p.tensor.shape()) {
            throw DataError("checkpoint tensor " + p.name + " has shape " + shape_str(saved->shape()) +
                            ", model expects " + shape_str(p.tensor.shape()));
        }
        auto& impl = p.tensor.impl();
        impl.dtype = saved->dtype();
        impl.data = saved->impl().data;
        impl.grad.reset();
    }
    return state;
}

}  // namespace longembed
