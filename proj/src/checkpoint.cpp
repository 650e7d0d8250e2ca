#include "adalign/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "adalign/error.hpp"

namespace adalign {
namespace {

constexpr const char* kMagic = "ADALIGN-CKPT 1";

void write_le_doubles(std::ostream& os, const std::vector<double>& xs) {
  std::vector<unsigned char> buf(xs.size() * 8);
  for (size_t i = 0; i < xs.size(); ++i) {
    uint64_t bits = std::bit_cast<uint64_t>(xs[i]);
    for (int k = 0; k < 8; ++k)
      buf[i * 8 + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
}

void read_le_doubles(const unsigned char* p, size_t n, std::vector<double>& out) {
  out.resize(n);
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<uint64_t>(p[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
}

}  // namespace

Checkpoint Checkpoint::from_params(const NamedParams& params,
                                   std::map<std::string, std::string> meta_in) {
  Checkpoint c;
  c.meta = std::move(meta_in);
  for (const auto& [name, t] : params) c.tensors.emplace_back(name, *t);
  return c;
}

void Checkpoint::restore_into(const NamedParams& params) const {
  if (params.size() != tensors.size())
    throw IoError("checkpoint restore: tensor count mismatch (" +
                  std::to_string(tensors.size()) + " in file, " +
                  std::to_string(params.size()) + " expected)");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [fname, ft] = tensors[i];
    const auto& [pname, pt] = params[i];
    if (fname != pname)
      throw IoError("checkpoint restore: tensor '" + fname + "' where '" +
                    pname + "' expected");
    if (!ft.same_shape(*pt))
      throw IoError("checkpoint restore: shape mismatch for '" + fname + "': " +
                    ft.shape_str() + " vs " + pt->shape_str());
    *pt = ft;
  }
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os << kMagic << "\n";
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw IoError("checkpoint meta keys must be single tokens: " + k);
    os << "meta " << k << " " << v << "\n";
  }
  size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (name.find_first_of(" \n") != std::string::npos)
      throw IoError("checkpoint tensor name contains whitespace: " + name);
    os << "tensor " << name << " " << t.rows << " " << t.cols << " " << offset
       << "\n";
    offset += static_cast<size_t>(t.numel()) * 8;
  }
  os << "data " << offset << "\n";
  for (const auto& [name, t] : tensors) write_le_doubles(os, t.data);
  if (!os) throw IoError("short write on checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kMagic)
    throw IoError("bad checkpoint magic in " + path);
  Checkpoint c;
  struct Entry {
    std::string name;
    int64_t rows, cols;
    size_t offset;
  };
  std::vector<Entry> entries;
  size_t data_bytes = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      c.meta[k] = v;
    } else if (tag == "tensor") {
      Entry e;
      ls >> e.name >> e.rows >> e.cols >> e.offset;
      if (!ls || e.rows < 0 || e.cols < 0)
        throw IoError("bad tensor line in " + path + ": " + line);
      entries.push_back(e);
    } else if (tag == "data") {
      ls >> data_bytes;
      if (!ls) throw IoError("bad data line in " + path);
      break;
    } else {
      throw IoError("unrecognized checkpoint line in " + path + ": " + line);
    }
  }
  std::vector<unsigned char> blob(data_bytes);
  is.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(data_bytes));
  if (static_cast<size_t>(is.gcount()) != data_bytes)
    throw IoError("truncated checkpoint data in " + path);
  for (const Entry& e : entries) {
    size_t n = static_cast<size_t>(e.rows) * static_cast<size_t>(e.cols);
    if (e.offset + n * 8 > data_bytes)
      throw IoError("tensor '" + e.name + "' extends past data block in " +
                    path);
    Tensor t(e.rows, e.cols);
    read_le_doubles(blob.data() + e.offset, n, t.data);
    c.tensors.emplace_back(e.name, std::move(t));
  }
  return c;
}

}  // namespace adalign
