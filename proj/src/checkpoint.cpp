#include "iocc/checkpoint.hpp"

#include "iocc/binary_io.hpp"

namespace iocc {

namespace {

constexpr char kCheckpointMagic[] = "IOCCCK01";

std::array<std::pair<std::size_t, std::size_t>, 8> tensor_shapes(const HeadShape &s) {
  const std::size_t pd = s.shared_hidden ? 0 : s.d;
  const std::size_t ph = s.shared_hidden ? 0 : s.hidden_p;
  const std::size_t pr = s.shared_hidden ? 0 : 1;
  return {{{s.d, s.hidden_c}, {1, s.hidden_c}, {s.hidden_c, s.K}, {1, s.K},
           {pd, ph}, {pr, ph}, {s.hidden_p, s.D}, {1, s.D}}};
}

template <class Tensors> void read_tensors(ByteReader &in, const HeadShape &s, Tensors tensors, const char *section) {
  const auto shapes = tensor_shapes(s);
  for (std::size_t k = 0; k < shapes.size(); ++k) *tensors[k] = in.matrix(shapes[k].first, shapes[k].second, section);
}

} // namespace

void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path) {
  ByteWriter out;
  out.magic(kCheckpointMagic);
  const auto s = ck.params.shape();
  for (auto v : {s.d, s.hidden_c, s.K, s.hidden_p, s.D}) out.u64(v);
  out.u64(ck.params.activation == Activation::relu ? 0 : 1);
  out.u64(ck.params.shared_hidden ? 1 : 0);
  out.u64(static_cast<std::uint64_t>(ck.iter));
  for (const Matrix *t : ck.params.tensors()) out.matrix(*t);

  out.u64(static_cast<std::uint64_t>(ck.adam.t));
  out.f64(ck.adam.beta1);
  out.f64(ck.adam.beta2);
  out.f64(ck.adam.eps);
  for (const Matrix *t : ck.adam.m.tensors()) out.matrix(*t);
  for (const Matrix *t : ck.adam.v.tensors()) out.matrix(*t);

  out.u64(ck.bank ? 1 : 0);
  if (ck.bank) {
    out.u64(ck.bank->C.rows());
    out.u64(ck.bank->C.cols());
    out.matrix(ck.bank->C);
    for (bool v : ck.bank->valid) out.u64(v ? 1 : 0);
    for (auto c : ck.bank->count_last) out.u64(c);
  }
  write_file(path, out.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  ByteReader in(read_file(path), path.string());
  in.expect_magic(kCheckpointMagic, "header");
  HeadShape s;
  s.d = in.u64("header.d");
  s.hidden_c = in.u64("header.hidden_c");
  s.K = in.u64("header.K");
  s.hidden_p = in.u64("header.hidden_p");
  s.D = in.u64("header.D");
  const auto act = in.u64("header.activation");
  if (act > 1) in.fail("header.activation", "unknown activation code");
  const auto shared = in.u64("header.shared_hidden");
  if (shared > 1) in.fail("header.shared_hidden", "flag must be 0 or 1");
  s.shared_hidden = shared == 1;
  if (s.shared_hidden && s.hidden_p != s.hidden_c) in.fail("header.shared_hidden", "hidden widths differ");
  Checkpoint ck;
  ck.iter = static_cast<long>(in.u64("header.iter"));
  ck.params = zero_params(s, act == 0 ? Activation::relu : Activation::identity);
  read_tensors(in, s, ck.params.tensors(), "weights");

  ck.adam = init_adam(ck.params);
  ck.adam.t = static_cast<std::int64_t>(in.u64("adam.t"));
  ck.adam.beta1 = in.f64("adam.beta1");
  ck.adam.beta2 = in.f64("adam.beta2");
  ck.adam.eps = in.f64("adam.eps");
  read_tensors(in, s, ck.adam.m.tensors(), "adam.m");
  read_tensors(in, s, ck.adam.v.tensors(), "adam.v");

  const auto has_bank = in.u64("bank.present");
  if (has_bank > 1) in.fail("bank.present", "flag must be 0 or 1");
  if (has_bank) {
    const auto K = in.u64("bank.K");
    const auto D = in.u64("bank.D");
    if (K != s.K || D != s.D) in.fail("bank", "shape mismatch with the projector");
    CenterBank b;
    b.C = in.matrix(K, D, "bank.C");
    b.valid.resize(K);
    for (std::size_t k = 0; k < K; ++k) b.valid[k] = in.u64("bank.valid") != 0;
    b.count_last.resize(K);
    for (auto &c : b.count_last) c = in.u64("bank.count_last");
    ck.bank = std::move(b);
  }
  if (!in.at_end()) in.fail("trailer", "unexpected trailing bytes");
  return ck;
}

} // namespace iocc
