#include "rwm/transforms.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace rwm {
namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

// Shortest form that reads back identically.
std::string num(double v) {
  char s[32];
  const auto r = std::to_chars(s, s + sizeof s, v);
  return std::string(s, r.ptr);
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InvalidArgument("transform parameter " + key + ": not a number: '" + text + "'");
  return v;
}

std::int64_t to_int(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InvalidArgument("transform parameter " + key + ": not an integer: '" + text + "'");
  return v;
}

}  // namespace

std::string format_spec(const TransformSpec& spec) {
  const std::string kind = kind_name(spec);
  return kind + std::visit(Overloaded{
                               [](const GaussianNoise& t) { return " sigma=" + num(t.sigma); },
                               [](const Rotation& t) { return " max_angle=" + num(t.max_angle); },
                               [](const Crop& t) {
                                 return " h=" + std::to_string(t.crop_h) + " w=" + std::to_string(t.crop_w);
                               },
                               [](const HorizontalFlip&) { return std::string(); },
                               [](const Brightness& t) { return " max_factor=" + num(t.max_factor); },
                               [](const Blur& t) { return " sigma=" + num(t.sigma); },
                               [](const Contrast& t) { return " factor=" + num(t.factor); },
                               [](const JpegLike& t) { return " quality=" + std::to_string(t.quality); },
                               [](const PixelDropout& t) { return " keep_percent=" + num(t.keep_percent); },
                           },
                           spec);
}

TransformSpec parse_spec(const std::string& line) {
  std::istringstream in(line);
  std::string kind, tok;
  in >> kind;
  std::map<std::string, std::string> kv;
  while (in >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("transform '" + kind + "': expected key=value, got '" + tok + "'");
    if (!kv.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second)
      throw InvalidArgument("transform '" + kind + "': repeated key " + tok.substr(0, eq));
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw InvalidArgument("transform '" + kind + "': missing " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  TransformSpec spec;
  if (kind == "gaussian_noise") spec = GaussianNoise{to_double("sigma", take("sigma"))};
  else if (kind == "rotation") spec = Rotation{to_double("max_angle", take("max_angle"))};
  else if (kind == "crop") {
    Crop c;
    c.crop_h = to_int("h", take("h"));
    c.crop_w = to_int("w", take("w"));
    spec = c;
  } else if (kind == "hflip") spec = HorizontalFlip{};
  else if (kind == "brightness") spec = Brightness{to_double("max_factor", take("max_factor"))};
  else if (kind == "blur") spec = Blur{to_double("sigma", take("sigma"))};
  else if (kind == "contrast") spec = Contrast{to_double("factor", take("factor"))};
  else if (kind == "jpeg_like") spec = JpegLike{static_cast<int>(to_int("quality", take("quality")))};
  else if (kind == "pixel_dropout") spec = PixelDropout{to_double("keep_percent", take("keep_percent"))};
  else throw InvalidArgument("unknown transform '" + kind + "'");
  if (!kv.empty()) throw InvalidArgument("transform '" + kind + "': unknown key " + kv.begin()->first);
  validate(spec);
  return spec;
}

std::string format_pipeline(const TransformPipeline& pipe) {
  std::string out = std::string("mode ") +
                    (pipe.mode == PipelineMode::composition ? "composition" : "single_random") + "\n";
  out += "seed " + std::to_string(pipe.seed) + "\n";
  for (const auto& s : pipe.specs) out += format_spec(s) + "\n";
  return out;
}

TransformPipeline parse_pipeline(const std::string& text) {
  TransformPipeline pipe;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    try {
      if (line.rfind("mode ", 0) == 0) {
        std::string m = trim(line.substr(5));
        if (m == "composition") pipe.mode = PipelineMode::composition;
        else if (m == "single_random") pipe.mode = PipelineMode::single_random;
        else throw InvalidArgument("unknown mode '" + m + "'");
      } else if (line.rfind("seed ", 0) == 0) {
        std::string v = trim(line.substr(5));
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), pipe.seed);
        if (ec != std::errc() || ptr != v.data() + v.size()) throw InvalidArgument("bad seed '" + v + "'");
      } else {
        pipe.specs.push_back(parse_spec(line));
      }
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("pipeline line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pipe;
}

std::string pipeline_label(const TransformPipeline& pipe) {
  if (pipe.specs.empty()) return "identity";
  std::string out;
  const char* sep = pipe.mode == PipelineMode::composition ? " + " : " | ";
  for (std::size_t i = 0; i < pipe.specs.size(); ++i) out += (i ? sep : "") + format_spec(pipe.specs[i]);
  return out;
}

}  // namespace rwm
