#include "edgefool/fcnn.hpp"

#include <cmath>

#include "edgefool/error.hpp"
#include "edgefool/random.hpp"

namespace edgefool {

void FcnnArchitecture::validate() const {
  if (dilations.size() < 2) throw ConfigError("FcnnArchitecture: need at least one hidden and one output layer");
  if (in_channels == 0 || width == 0 || out_channels == 0) {
    throw ConfigError("FcnnArchitecture: channel counts must be positive");
  }
  for (std::size_t d : dilations) {
    if (d < 1) throw ConfigError("FcnnArchitecture: dilations must be >= 1");
  }
  if (dilations.back() != 1) throw ConfigError("FcnnArchitecture: the 1x1 output layer must have dilation 1");
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("FcnnArchitecture: slope must lie in (0,1)");
  if (!(norm_eps > 0.0)) throw ConfigError("FcnnArchitecture: norm_eps must be > 0");
}

std::vector<Tensor*> FcnnParams::tensors() {
  std::vector<Tensor*> out;
  for (FcnnLayer& l : layers) {
    out.push_back(&l.weights);
    if (l.normalized) {
      out.push_back(&l.gain);
      out.push_back(&l.shift);
    } else {
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const Tensor*> FcnnParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const FcnnLayer& l : layers) {
    out.push_back(&l.weights);
    if (l.normalized) {
      out.push_back(&l.gain);
      out.push_back(&l.shift);
    } else {
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<std::string> FcnnParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    out.push_back(prefix + "weight");
    if (layers[i].normalized) {
      out.push_back(prefix + "gain");
      out.push_back(prefix + "shift");
    } else {
      out.push_back(prefix + "bias");
    }
  }
  return out;
}

std::size_t FcnnParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

FcnnParams fcnn_init(const FcnnArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  FcnnParams params;
  params.arch = arch;
  params.seed = seed;
  Rng rng(seed);
  const std::size_t n = arch.num_layers();
  for (std::size_t i = 0; i < n; ++i) {
    const bool last = i + 1 == n;
    const std::size_t in = i == 0 ? arch.in_channels : arch.width;
    const std::size_t out = last ? arch.out_channels : arch.width;
    FcnnLayer layer;
    layer.normalized = !last;
    layer.spec = ConvSpec::same(in, out, last ? 1 : 3, arch.dilations[i]);
    layer.weights = Tensor(layer.spec.weight_shape());
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.spec.fan_in()));
    for (double& w : layer.weights.values()) w = rng.uniform(-bound, bound);
    if (last) {
      layer.bias = Tensor({out});
    } else {
      layer.gain = Tensor({out}, 1.0);
      layer.shift = Tensor({out});
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Image fcnn_forward(const Image& img, const FcnnParams& params, FcnnCache* cache) {
  require_image(img, "fcnn_forward");
  if (params.layers.empty()) throw ConfigError("fcnn_forward: parameters are not initialized");
  if (img.dim(0) != params.arch.in_channels) throw ShapeError("fcnn_forward: channel count mismatch");
  if (cache) {
    *cache = FcnnCache{};
    cache->revision = params.revision;
    cache->params = &params;
  }
  Tensor x = img;
  for (const FcnnLayer& layer : params.layers) {
    if (cache) cache->conv_inputs.push_back(x);
    Tensor y = conv2d_forward(x, layer.spec, layer.weights, layer.bias);
    if (layer.normalized) {
      Tensor z = instance_norm_forward(y, layer.gain, layer.shift, params.arch.norm_eps);
      x = leaky_relu_forward(z, params.arch.slope);
      if (cache) {
        cache->conv_outputs.push_back(std::move(y));
        cache->norm_outputs.push_back(std::move(z));
      }
    } else {
      x = std::move(y);
      if (cache) {
        cache->conv_outputs.emplace_back();
        cache->norm_outputs.emplace_back();
      }
    }
  }
  return x;
}

FcnnGrads fcnn_backward(const Image& grad_structure, const FcnnCache& cache, const FcnnParams& params) {
  if (cache.params != &params || cache.revision != params.revision ||
      cache.conv_inputs.size() != params.layers.size()) {
    throw Error("fcnn_backward: activation cache is stale or belongs to different parameters");
  }
  const Tensor& input = cache.conv_inputs.front();
  if (grad_structure.shape() != Shape{params.arch.out_channels, input.dim(1), input.dim(2)}) {
    throw ShapeError("fcnn_backward: gradient shape " + shape_string(grad_structure.shape()) +
                     " does not match the cached forward pass");
  }
  const std::size_t n = params.layers.size();
  std::vector<std::vector<Tensor>> per_layer(n);
  Tensor g = grad_structure;
  for (std::size_t k = n; k-- > 0;) {
    const FcnnLayer& layer = params.layers[k];
    if (layer.normalized) {
      const Tensor gz = leaky_relu_backward(g, cache.norm_outputs[k], params.arch.slope);
      InstanceNormGrads ng = instance_norm_backward(gz, cache.conv_outputs[k], layer.gain, params.arch.norm_eps);
      ConvGrads cg = conv2d_backward(ng.input, cache.conv_inputs[k], layer.spec, layer.weights);
      per_layer[k] = {std::move(cg.weights), std::move(ng.gain), std::move(ng.shift)};
      g = std::move(cg.input);
    } else {
      ConvGrads cg = conv2d_backward(g, cache.conv_inputs[k], layer.spec, layer.weights);
      per_layer[k] = {std::move(cg.weights), std::move(cg.bias)};
      g = std::move(cg.input);
    }
  }
  FcnnGrads out;
  for (auto& l : per_layer) {
    for (auto& t : l) out.push_back(std::move(t));
  }
  return out;
}

PackedWeights fcnn_to_packed(const FcnnParams& params) {
  PackedWeights p;
  p.metadata = {{"kind", "fcnn"},
                {"in_channels", params.arch.in_channels},
                {"width", params.arch.width},
                {"out_channels", params.arch.out_channels},
                {"dilations", params.arch.dilations},
                {"slope", params.arch.slope},
                {"norm_eps", params.arch.norm_eps},
                {"seed", params.seed}};
  const std::vector<std::string> names = params.tensor_names();
  const std::vector<const Tensor*> tensors = params.tensors();
  for (std::size_t i = 0; i < names.size(); ++i) p.tensors.push_back({names[i], *tensors[i]});
  return p;
}

FcnnParams fcnn_from_packed(const PackedWeights& packed) {
  FcnnParams params;
  try {
    if (packed.metadata.value("kind", std::string()) != "fcnn") {
      throw FormatError("packed weights do not describe an FCNN");
    }
    FcnnArchitecture arch;
    arch.in_channels = packed.metadata.at("in_channels").get<std::size_t>();
    arch.width = packed.metadata.at("width").get<std::size_t>();
    arch.out_channels = packed.metadata.at("out_channels").get<std::size_t>();
    arch.dilations = packed.metadata.at("dilations").get<std::vector<std::size_t>>();
    arch.slope = packed.metadata.at("slope").get<double>();
    arch.norm_eps = packed.metadata.at("norm_eps").get<double>();
    params = fcnn_init(arch, packed.metadata.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("FCNN manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("FCNN manifest: ") + e.what());
  }
  const std::vector<std::string> names = params.tensor_names();
  std::vector<Tensor*> tensors = params.tensors();
  if (packed.tensors.size() != names.size()) {
    throw FormatError("FCNN: expected " + std::to_string(names.size()) + " tensors, file has " +
                      std::to_string(packed.tensors.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const NamedTensor& src = packed.tensors[i];
    if (src.name != names[i] || src.tensor.shape() != tensors[i]->shape()) {
      throw FormatError("FCNN: tensor '" + src.name + "' " + shape_string(src.tensor.shape()) +
                        " does not match expected '" + names[i] + "' " + shape_string(tensors[i]->shape()));
    }
    *tensors[i] = src.tensor;
  }
  return params;
}

void save_fcnn(const std::string& path, const FcnnParams& params) { write_packed(path, fcnn_to_packed(params)); }

FcnnParams load_fcnn(const std::string& path) { return fcnn_from_packed(read_packed(path)); }

}  // namespace edgefool
