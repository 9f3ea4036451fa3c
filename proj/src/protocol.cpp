#include "ppsimrank/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <thread>

namespace ppsr {

Role role_named(const std::string& name) {
  if (name == "cryptographer") return Role::cryptographer;
  if (name == "calculator") return Role::calculator;
  if (name == "contributor") return Role::contributor;
  fail(Errc::roster_misconfig, "unknown role '" + name + "'");
}

const char* role_name(Role r) {
  switch (r) {
    case Role::cryptographer: return "cryptographer";
    case Role::calculator: return "calculator";
    case Role::contributor: return "contributor";
  }
  return "?";
}

void ProtocolConfig::validate() const {
  params.validate();
  if (!(d_in > 0.0 && d_in < 1.0 && d_out > 0.0 && d_out < 1.0))
    fail(Errc::invalid_params, "decay factors must lie in (0,1)");
  if (iterations < 0) fail(Errc::invalid_params, "iterations must be nonnegative");
  if (frac_bits < 1) fail(Errc::invalid_params, "frac_bits must be positive");
  int crypto = 0, calc = 0;
  for (const auto& p : roster) {
    if (p.role == Role::cryptographer) ++crypto;
    if (p.role == Role::calculator) ++calc;
  }
  if (crypto != 1 || calc != 1)
    fail(Errc::roster_misconfig, "roster needs exactly one cryptographer and one calculator");
  if (roster.size() >= 2 && cryptographer_id() == calculator_id())
    fail(Errc::roster_misconfig, "cryptographer and calculator must be distinct parties");
  for (std::size_t i = 0; i < roster.size(); ++i)
    for (std::size_t j = i + 1; j < roster.size(); ++j)
      if (roster[i].id == roster[j].id) fail(Errc::roster_misconfig, "duplicate party id '" + roster[i].id + "'");
}

const PartySpec& ProtocolConfig::party(const std::string& id) const {
  for (const auto& p : roster)
    if (p.id == id) return p;
  fail(Errc::roster_misconfig, "party '" + id + "' not in roster");
}

std::string ProtocolConfig::cryptographer_id() const {
  for (const auto& p : roster)
    if (p.role == Role::cryptographer) return p.id;
  fail(Errc::roster_misconfig, "no cryptographer in roster");
}

std::string ProtocolConfig::calculator_id() const {
  for (const auto& p : roster)
    if (p.role == Role::calculator) return p.id;
  fail(Errc::roster_misconfig, "no calculator in roster");
}

std::vector<std::string> ProtocolConfig::contributor_ids() const {
  std::vector<std::string> out;
  for (const auto& p : roster)
    if (p.role == Role::contributor) out.push_back(p.id);
  return out;
}

std::vector<std::string> ProtocolConfig::others(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& p : roster)
    if (p.id != id) out.push_back(p.id);
  return out;
}

// --- wire helpers -----------------------------------------------------------

namespace {

nlohmann::json string_to_json(const CipherString& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : s.bits) arr.push_back(to_hex(b.value));
  return arr;
}

CipherString string_from_json(const nlohmann::json& arr, const FixedLayout& layout, int noise_bits) {
  if (!arr.is_array() || static_cast<int>(arr.size()) != layout.width)
    fail(Errc::protocol_violation, "cipher string width mismatch");
  CipherString s;
  s.layout = layout;
  for (const auto& h : arr) s.bits.push_back(Cipher{from_hex(h.get<std::string>()), noise_bits});
  return s;
}

nlohmann::json rows_to_json(const std::vector<std::vector<Cipher>>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& c : row) r.push_back(to_hex(c.value));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<Cipher>> rows_from_json(const nlohmann::json& j, std::size_t n, int noise_bits) {
  std::vector<std::vector<Cipher>> rows;
  for (const auto& r : j) {
    if (r.size() != n) fail(Errc::protocol_violation, "cipher row length mismatch");
    std::vector<Cipher> row;
    for (const auto& h : r) row.push_back(Cipher{from_hex(h.get<std::string>()), noise_bits});
    rows.push_back(std::move(row));
  }
  return rows;
}

std::uint64_t width_mask(int width) { return width >= 64 ? ~0ULL : (1ULL << width) - 1; }

}  // namespace

// --- building blocks ---------------------------------------------------------

PairMatrix build_pair_matrix(CircuitContext& ctx, const std::vector<std::vector<Cipher>>& cipher_rows) {
  const int m = static_cast<int>(cipher_rows.size());
  const int n = m == 0 ? 0 : static_cast<int>(cipher_rows[0].size());
  PairMatrix out;
  out.rows = PairIndex(m);
  out.cols = PairIndex(n);
  out.pi.resize(out.rows.size() * out.cols.size());
  for (std::size_t x = 0; x < out.rows.size(); ++x) {
    auto [v1, v2] = out.rows.pair_at(x);
    const auto& r1 = cipher_rows[static_cast<std::size_t>(v1)];
    const auto& r2 = cipher_rows[static_cast<std::size_t>(v2)];
    for (std::size_t y = 0; y < out.cols.size(); ++y) {
      auto [u1, u2] = out.cols.pair_at(y);
      if (v1 == v2 && u1 == u2) {
        // both diagonal: the single AND term collapses to the link bit itself
        out.at(x, y) = r1[static_cast<std::size_t>(u1)];
      } else if (v1 == v2 || u1 == u2) {
        out.at(x, y) = ctx.mul(r1[static_cast<std::size_t>(u1)], r2[static_cast<std::size_t>(u2)]);
      } else {
        Cipher case1 = ctx.mul(r1[static_cast<std::size_t>(u1)], r2[static_cast<std::size_t>(u2)]);
        Cipher case2 = ctx.mul(r1[static_cast<std::size_t>(u2)], r2[static_cast<std::size_t>(u1)]);
        out.at(x, y) = cipher_or(ctx, case1, case2);
      }
    }
  }
  return out;
}

CipherString degree_string(CircuitContext& ctx, std::span<const Cipher> bits, const FixedLayout& layout) {
  auto extend = [&](const Cipher& b) {
    CipherString s;
    s.layout = layout;
    s.bits.reserve(static_cast<std::size_t>(layout.width));
    s.bits.push_back(b);
    while (static_cast<int>(s.bits.size()) < layout.width) s.bits.push_back(ctx.fresh(0));
    return s;
  };
  if (bits.empty()) return zero_string(ctx, layout);
  CipherString acc = extend(bits[0]);
  for (std::size_t j = 1; j < bits.size(); ++j) acc = add_strings(ctx, acc, extend(bits[j]));
  return acc;
}

CipherString compute_normalizer(CircuitContext& ctx, const CipherString& deg1, const CipherString& deg2,
                                const CipherString& enc_decay) {
  CipherString prod = mul_strings_integer(ctx, deg1, deg2);
  return div_strings(ctx, enc_decay, prod);
}

Normalizers compute_all_normalizers(CircuitContext& ctx, const std::vector<std::vector<Cipher>>& cipher_rows,
                                    const FixedLayout& layout, double d_in, double d_out) {
  const int m = static_cast<int>(cipher_rows.size());
  const int n = m == 0 ? 0 : static_cast<int>(cipher_rows[0].size());
  PairIndex pv(m), pu(n);

  std::vector<CipherString> deg_v, deg_u;
  deg_v.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) deg_v.push_back(degree_string(ctx, cipher_rows[static_cast<std::size_t>(i)], layout));
  deg_u.reserve(static_cast<std::size_t>(n));
  std::vector<Cipher> column(static_cast<std::size_t>(m));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i) column[static_cast<std::size_t>(i)] = cipher_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    deg_u.push_back(degree_string(ctx, column, layout));
  }

  CipherString enc_dout = encrypt_string(ctx, raw_from_bits(encode_fixed(d_out, layout)), layout);
  CipherString enc_din = encrypt_string(ctx, raw_from_bits(encode_fixed(d_in, layout)), layout);

  Normalizers norm;
  norm.v.reserve(pv.offdiag_count());
  for (std::size_t x = 0; x < pv.offdiag_count(); ++x) {
    auto [a, b] = pv.pair_at(x);
    norm.v.push_back(compute_normalizer(ctx, deg_v[static_cast<std::size_t>(a)], deg_v[static_cast<std::size_t>(b)], enc_dout));
  }
  norm.u.reserve(pu.offdiag_count());
  for (std::size_t y = 0; y < pu.offdiag_count(); ++y) {
    auto [a, b] = pu.pair_at(y);
    norm.u.push_back(compute_normalizer(ctx, deg_u[static_cast<std::size_t>(a)], deg_u[static_cast<std::size_t>(b)], enc_din));
  }
  return norm;
}

ScoreVector initial_scores(CircuitContext& ctx, const PairIndex& pv, const PairIndex& pu,
                           const FixedLayout& layout) {
  const std::uint64_t one = 1ULL << layout.frac;
  ScoreVector theta;
  theta.v_scores.reserve(pv.size());
  for (std::size_t x = 0; x < pv.size(); ++x)
    theta.v_scores.push_back(encrypt_string(ctx, pv.is_diagonal(x) ? one : 0, layout));
  theta.u_scores.reserve(pu.size());
  for (std::size_t y = 0; y < pu.size(); ++y)
    theta.u_scores.push_back(encrypt_string(ctx, pu.is_diagonal(y) ? one : 0, layout));
  return theta;
}

void iterate_scores(CircuitContext& ctx, const PairMatrix& m, ScoreVector& theta, const Normalizers& norm,
                    int rounds) {
  const PairIndex& pv = m.rows;
  const PairIndex& pu = m.cols;
  const FixedLayout layout = theta.u_scores.empty() ? theta.v_scores.at(0).layout : theta.u_scores[0].layout;
  const std::uint64_t one = 1ULL << layout.frac;

  for (int round = 0; round < rounds; ++round) {
    for (std::size_t x = 0; x < pv.offdiag_count(); ++x) {
      CipherString sum;
      for (std::size_t y = 0; y < pu.size(); ++y) {
        CipherString term = scalar_mask_mul(ctx, m.at(x, y), theta.u_scores[y]);
        sum = y == 0 ? std::move(term) : add_strings(ctx, sum, term);
      }
      theta.v_scores[x] = mul_strings(ctx, norm.v[x], sum);
    }
    for (std::size_t x = pv.offdiag_count(); x < pv.size(); ++x)
      theta.v_scores[x] = encrypt_string(ctx, one, layout);

    for (std::size_t y = 0; y < pu.offdiag_count(); ++y) {
      CipherString sum;
      for (std::size_t x = 0; x < pv.size(); ++x) {
        CipherString term = scalar_mask_mul(ctx, m.at(x, y), theta.v_scores[x]);
        sum = x == 0 ? std::move(term) : add_strings(ctx, sum, term);
      }
      theta.u_scores[y] = mul_strings(ctx, norm.u[y], sum);
    }
    for (std::size_t y = pu.offdiag_count(); y < pu.size(); ++y)
      theta.u_scores[y] = encrypt_string(ctx, one, layout);
  }
}

std::pair<std::vector<CipherString>, std::vector<std::uint64_t>> mask_scores(
    CircuitContext& ctx, std::span<const CipherString> u_offdiag, Rng& rng) {
  std::vector<CipherString> masked;
  std::vector<std::uint64_t> masks;
  masked.reserve(u_offdiag.size());
  masks.reserve(u_offdiag.size());
  for (const CipherString& s : u_offdiag) {
    std::uint64_t r = rng.next_u64() & width_mask(s.layout.width);
    CipherString enc_r = encrypt_string(ctx, r, s.layout);
    masked.push_back(add_strings(ctx, s, enc_r));
    masks.push_back(r);
  }
  return {std::move(masked), std::move(masks)};
}

Cipher recrypt_remote(Endpoint& ep, const std::string& cryptographer, const Cipher& c, int assumed_noise_bits) {
  ep.send(cryptographer, msg::RecryptRequest, nlohmann::json{{"cipher", to_hex(c.value)}});
  ProtocolMessage reply = ep.recv_expect(msg::RecryptResponse);
  return Cipher{from_hex(reply.body.at("cipher").get<std::string>()), assumed_noise_bits};
}

// --- reports ------------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
  nlohmann::json j{{"scheme", scheme},
                   {"preset", preset},
                   {"width", width},
                   {"frac_bits", frac_bits},
                   {"iterations", iterations},
                   {"m", m},
                   {"n", n},
                   {"parties", parties},
                   {"op_counters", op_counters},
                   {"recrypt_round_trips", recrypt_round_trips},
                   {"traffic", traffic}};
  j["phase_seconds"] = phase_seconds;
  j["phase_hom_mul"] = phase_hom_mul;
  j["phase_hom_add"] = phase_hom_add;
  if (oracle_checked) j["oracle_match"] = oracle_match;
  return j;
}

ScoreTable RunOutcome::table() const {
  ScoreTable t;
  t.u_ids = u_ids;
  t.u_scores.reserve(u_raw.size());
  for (std::uint64_t raw : u_raw) t.u_scores.push_back(decode_fixed(raw, layout));
  return t;
}

// --- party state machines ------------------------------------------------------

namespace {

struct PartyEnv {
  const ProtocolConfig& cfg;
  std::string id;
  Endpoint& ep;
  std::unique_ptr<Scheme> scheme;
  Rng rng;
  std::string step = "setup";

  PartyEnv(const ProtocolConfig& c, std::string party, Endpoint& e)
      : cfg(c), id(std::move(party)), ep(e), scheme(make_scheme(c.scheme, c.params)),
        rng(Rng(c.seed).fork(fnv1a64(id))) {}
};

std::vector<std::vector<Cipher>> encrypt_rows(const BipartiteGraph& g, CipherTable& table) {
  std::vector<std::vector<Cipher>> rows;
  rows.reserve(g.v_count());
  for (const auto& bits : encode_bitvectors(g)) {
    std::vector<Cipher> row;
    row.reserve(bits.size());
    for (auto b : bits) row.push_back(table.take(b));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::uint64_t> reconstruct_scores(const std::vector<std::uint64_t>& noisy,
                                              const std::map<std::string, std::vector<std::uint64_t>>& mask_lists,
                                              const FixedLayout& layout, std::size_t n) {
  PairIndex pu(static_cast<int>(n));
  if (noisy.size() != pu.offdiag_count()) fail(Errc::protocol_violation, "noisy score count mismatch");
  const std::uint64_t mask = width_mask(layout.width);
  std::vector<std::uint64_t> u_raw(pu.size(), 0);
  for (std::size_t y = 0; y < pu.offdiag_count(); ++y) {
    std::uint64_t v = noisy[y];
    for (const auto& [party, list] : mask_lists) v = (v - list[y]) & mask;
    u_raw[y] = v;
  }
  for (std::size_t y = pu.offdiag_count(); y < pu.size(); ++y) u_raw[y] = 1ULL << layout.frac;
  return u_raw;
}

nlohmann::json masks_to_json(const std::vector<std::uint64_t>& masks) {
  nlohmann::json arr = nlohmann::json::array();
  for (auto v : masks) arr.push_back(to_hex(BigInt(static_cast<unsigned long>(v))));
  return arr;
}

std::vector<std::uint64_t> masks_from_json(const nlohmann::json& arr, std::size_t expected) {
  if (arr.size() != expected) fail(Errc::protocol_violation, "mask list size mismatch");
  std::vector<std::uint64_t> out;
  out.reserve(expected);
  for (const auto& h : arr) out.push_back(from_hex(h.get<std::string>()).get_ui());
  return out;
}

RunOutcome run_cryptographer(PartyEnv& env, const BipartiteGraph& own) {
  const ProtocolConfig& cfg = env.cfg;
  env.step = "keygen";
  Rng krng = env.rng.fork(1);
  KeyPair kp = env.scheme->keygen(krng);
  for (const auto& p : cfg.others(env.id))
    env.ep.send(p, msg::PublicKey,
                nlohmann::json{{"pk", public_key_json(cfg.params, kp.pk)}, {"scheme", cfg.scheme}});

  env.step = "encrypt-graph";
  CipherTable table(*env.scheme, kp.pk, env.rng.fork(2), cfg.table_refill);
  auto rows = encrypt_rows(own, table);
  env.ep.send(cfg.calculator_id(), msg::EncGraph,
              nlohmann::json{{"party", env.id}, {"u_ids", own.u_nodes}, {"v_ids", own.v_nodes},
                             {"rows", rows_to_json(rows)}});

  env.step = "serve-recrypts";
  const int assumed = cfg.params.eta - 3;
  nlohmann::json masked_body;
  for (;;) {
    ProtocolMessage m = env.ep.recv();
    if (m.type == msg::RecryptRequest) {
      Cipher c{from_hex(m.body.at("cipher").get<std::string>()), assumed};
      Cipher fresh = recrypt_local(*env.scheme, kp.sk, c, table);
      env.ep.send(m.from, msg::RecryptResponse, nlohmann::json{{"cipher", to_hex(fresh.value)}});
    } else if (m.type == msg::MaskedScores) {
      masked_body = std::move(m.body);
      break;
    } else if (m.type == msg::Abort) {
      fail(Errc::aborted, "peer " + m.from + " aborted: " + m.body.value("reason", std::string("?")));
    } else {
      fail(Errc::protocol_violation, "unexpected " + m.type + " while serving recrypts");
    }
  }

  env.step = "decrypt-scores";
  FixedLayout layout{masked_body.at("width").get<int>(), cfg.frac_bits};
  layout.validate();
  PairIndex pu(static_cast<int>(own.u_count()));
  const auto& strings = masked_body.at("strings");
  if (strings.size() != pu.offdiag_count()) fail(Errc::protocol_violation, "masked score count mismatch");
  std::vector<std::uint64_t> noisy;
  noisy.reserve(strings.size());
  for (const auto& s : strings)
    noisy.push_back(decrypt_string(*env.scheme, kp.sk, string_from_json(s, layout, assumed)));

  nlohmann::json values = nlohmann::json::array();
  for (auto v : noisy) values.push_back(to_hex(BigInt(static_cast<unsigned long>(v))));
  for (const auto& p : cfg.others(env.id))
    env.ep.send(p, msg::NoisyPlainScores, nlohmann::json{{"width", layout.width}, {"values", values}});

  env.step = "collect-mask-reveals";
  std::map<std::string, std::vector<std::uint64_t>> mask_lists;
  std::vector<std::string> expected = cfg.contributor_ids();
  expected.push_back(cfg.calculator_id());
  while (mask_lists.size() < expected.size()) {
    ProtocolMessage m = env.ep.recv_expect(msg::MaskReveal);
    if (std::find(expected.begin(), expected.end(), m.from) == expected.end())
      fail(Errc::protocol_violation, "mask reveal from unexpected party " + m.from);
    mask_lists[m.from] = masks_from_json(m.body.at("masks"), pu.offdiag_count());
  }

  env.step = "reconstruct";
  RunOutcome out;
  out.u_ids = own.u_nodes;
  out.layout = layout;
  out.u_raw = reconstruct_scores(noisy, mask_lists, layout, own.u_count());
  out.report.scheme = cfg.scheme;
  out.report.preset = cfg.params.preset_name();
  out.report.width = layout.width;
  out.report.frac_bits = cfg.frac_bits;
  out.report.iterations = cfg.iterations;
  out.report.n = own.u_count();
  out.report.parties = cfg.roster.size();
  return out;
}

RunOutcome run_calculator(PartyEnv& env, const BipartiteGraph& own) {
  const ProtocolConfig& cfg = env.cfg;
  const std::string crypto = cfg.cryptographer_id();

  env.step = "receive-key";
  ProtocolMessage pk_msg = env.ep.recv_expect(msg::PublicKey);
  auto [peer_params, pk] = public_key_from_json(pk_msg.body.at("pk"));
  if (params_json(peer_params) != params_json(cfg.params) ||
      pk_msg.body.value("scheme", std::string()) != cfg.scheme)
    fail(Errc::protocol_violation, "cryptographer announced different scheme parameters");

  env.step = "encrypt-graph";
  CipherTable table(*env.scheme, pk, env.rng.fork(2), cfg.table_refill);
  std::map<std::string, std::vector<std::vector<Cipher>>> rows_by_party;
  rows_by_party[env.id] = encrypt_rows(own, table);

  env.step = "collect-graphs";
  const auto contributors = cfg.contributor_ids();
  std::map<std::string, std::vector<std::vector<CipherString>>> pending_masks;  // parsed later
  std::map<std::string, nlohmann::json> mask_bodies;
  std::size_t graphs_needed = cfg.roster.size() - 1;
  std::size_t masks_needed = contributors.size();
  const int fresh_noise = cfg.params.rho;
  while (graphs_needed > 0 || masks_needed > 0) {
    ProtocolMessage m = env.ep.recv();
    if (m.type == msg::EncGraph) {
      auto u_ids = m.body.at("u_ids").get<std::vector<std::string>>();
      if (u_ids != own.u_nodes) fail(Errc::protocol_violation, "party " + m.from + " disagrees on u ordering");
      if (rows_by_party.count(m.from)) fail(Errc::protocol_violation, "duplicate EncGraph from " + m.from);
      rows_by_party[m.from] = rows_from_json(m.body.at("rows"), own.u_count(), fresh_noise);
      --graphs_needed;
    } else if (m.type == msg::EncMaskList) {
      if (mask_bodies.count(m.from)) fail(Errc::protocol_violation, "duplicate EncMaskList from " + m.from);
      mask_bodies[m.from] = std::move(m.body);
      --masks_needed;
    } else if (m.type == msg::Abort) {
      fail(Errc::aborted, "peer " + m.from + " aborted: " + m.body.value("reason", std::string("?")));
    } else {
      fail(Errc::protocol_violation, "unexpected " + m.type + " while collecting graphs");
    }
  }

  env.step = "assemble";
  std::vector<std::vector<Cipher>> joint;
  for (const auto& p : cfg.roster) {
    auto it = rows_by_party.find(p.id);
    if (it == rows_by_party.end()) fail(Errc::protocol_violation, "missing graph rows for " + p.id);
    for (auto& row : it->second) joint.push_back(std::move(row));
  }
  const std::size_t m_total = joint.size(), n = own.u_count();
  FixedLayout layout = cfg.width > 0 ? FixedLayout{cfg.width, cfg.frac_bits}
                                     : pipeline_layout(cfg.frac_bits, m_total, n);
  layout.validate();
  PairIndex pu(static_cast<int>(n));

  std::map<std::string, std::vector<CipherString>> contributor_masks;
  for (const auto& [party, body] : mask_bodies) {
    std::vector<CipherString> list;
    const auto& arr = body.at("masks");
    if (arr.size() != pu.offdiag_count()) fail(Errc::protocol_violation, "mask list count mismatch");
    for (const auto& s : arr) list.push_back(string_from_json(s, layout, fresh_noise));
    contributor_masks[party] = std::move(list);
  }

  RunReport report;
  report.scheme = cfg.scheme;
  report.preset = cfg.params.preset_name();
  report.width = layout.width;
  report.frac_bits = cfg.frac_bits;
  report.iterations = cfg.iterations;
  report.m = m_total;
  report.n = n;
  report.parties = cfg.roster.size();

  std::uint64_t round_trips = 0;
  CircuitContext ctx(*env.scheme, pk, table, [&](const Cipher& c) {
    ++round_trips;
    return recrypt_remote(env.ep, crypto, c, cfg.params.rho);
  });

  auto phase = [&](const char* name, auto&& fn) {
    OpStats before = ctx.counters().totals();
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    OpStats after = ctx.counters().totals();
    report.phase_seconds[name] = std::chrono::duration<double>(t1 - t0).count();
    report.phase_hom_mul[name] = after.hom_mul - before.hom_mul;
    report.phase_hom_add[name] = after.hom_add - before.hom_add;
  };

  env.step = "pair-matrix";
  PairMatrix matrix;
  phase("pair_matrix", [&] { matrix = build_pair_matrix(ctx, joint); });

  env.step = "normalizers";
  Normalizers norm;
  phase("normalizers", [&] { norm = compute_all_normalizers(ctx, joint, layout, cfg.d_in, cfg.d_out); });

  env.step = "iterate";
  ScoreVector theta;
  phase("iterate", [&] {
    theta = initial_scores(ctx, matrix.rows, matrix.cols, layout);
    iterate_scores(ctx, matrix, theta, norm, cfg.iterations);
  });

  env.step = "masking";
  std::vector<CipherString> masked;
  std::vector<std::uint64_t> my_masks;
  phase("masking", [&] {
    Rng mask_rng = env.rng.fork(3);
    std::span<const CipherString> offdiag(theta.u_scores.data(), pu.offdiag_count());
    std::tie(masked, my_masks) = mask_scores(ctx, offdiag, mask_rng);
    for (const auto& p : contributors)
      for (std::size_t y = 0; y < masked.size(); ++y)
        masked[y] = add_strings(ctx, masked[y], contributor_masks.at(p)[y]);
  });

  nlohmann::json strings = nlohmann::json::array();
  for (const auto& s : masked) strings.push_back(string_to_json(s));
  env.ep.send(crypto, msg::MaskedScores, nlohmann::json{{"width", layout.width}, {"strings", strings}});

  env.step = "finish";
  ProtocolMessage noisy_msg = env.ep.recv_expect(msg::NoisyPlainScores);
  std::vector<std::uint64_t> noisy = masks_from_json(noisy_msg.body.at("values"), pu.offdiag_count());

  // masks are revealed only after the decrypted noisy scores arrived
  for (const auto& p : cfg.others(env.id))
    env.ep.send(p, msg::MaskReveal, nlohmann::json{{"party", env.id}, {"masks", masks_to_json(my_masks)}});

  std::map<std::string, std::vector<std::uint64_t>> mask_lists;
  mask_lists[env.id] = my_masks;
  while (mask_lists.size() < contributors.size() + 1) {
    ProtocolMessage m = env.ep.recv_expect(msg::MaskReveal);
    if (std::find(contributors.begin(), contributors.end(), m.from) == contributors.end())
      fail(Errc::protocol_violation, "mask reveal from unexpected party " + m.from);
    mask_lists[m.from] = masks_from_json(m.body.at("masks"), pu.offdiag_count());
  }

  env.step = "reconstruct";
  RunOutcome out;
  out.u_ids = own.u_nodes;
  out.layout = layout;
  out.u_raw = reconstruct_scores(noisy, mask_lists, layout, n);
  report.op_counters = ctx.counters().to_json();
  report.recrypt_round_trips = round_trips;
  out.report = std::move(report);
  return out;
}

RunOutcome run_contributor(PartyEnv& env, const BipartiteGraph& own) {
  const ProtocolConfig& cfg = env.cfg;
  if (cfg.width <= 0)
    fail(Errc::invalid_params, "contributors need an explicit score width in the shared config");
  FixedLayout layout{cfg.width, cfg.frac_bits};
  layout.validate();
  PairIndex pu(static_cast<int>(own.u_count()));

  env.step = "receive-key";
  ProtocolMessage pk_msg = env.ep.recv_expect(msg::PublicKey);
  auto [peer_params, pk] = public_key_from_json(pk_msg.body.at("pk"));
  if (params_json(peer_params) != params_json(cfg.params))
    fail(Errc::protocol_violation, "cryptographer announced different scheme parameters");

  env.step = "encrypt-graph";
  CipherTable table(*env.scheme, pk, env.rng.fork(2), cfg.table_refill);
  auto rows = encrypt_rows(own, table);
  env.ep.send(cfg.calculator_id(), msg::EncGraph,
              nlohmann::json{{"party", env.id}, {"u_ids", own.u_nodes}, {"v_ids", own.v_nodes},
                             {"rows", rows_to_json(rows)}});

  env.step = "send-masks";
  Rng mask_rng = env.rng.fork(3);
  std::vector<std::uint64_t> my_masks(pu.offdiag_count());
  CircuitContext ctx(*env.scheme, pk, table);
  nlohmann::json enc_masks = nlohmann::json::array();
  for (auto& r : my_masks) {
    r = mask_rng.next_u64() & width_mask(layout.width);
    enc_masks.push_back(string_to_json(encrypt_string(ctx, r, layout)));
  }
  env.ep.send(cfg.calculator_id(), msg::EncMaskList, nlohmann::json{{"party", env.id}, {"masks", enc_masks}});

  env.step = "finish";
  ProtocolMessage noisy_msg = env.ep.recv_expect(msg::NoisyPlainScores);
  std::vector<std::uint64_t> noisy = masks_from_json(noisy_msg.body.at("values"), pu.offdiag_count());

  for (const auto& p : cfg.others(env.id))
    env.ep.send(p, msg::MaskReveal, nlohmann::json{{"party", env.id}, {"masks", masks_to_json(my_masks)}});

  std::vector<std::string> expected = cfg.contributor_ids();
  expected.erase(std::remove(expected.begin(), expected.end(), env.id), expected.end());
  expected.push_back(cfg.calculator_id());
  std::map<std::string, std::vector<std::uint64_t>> mask_lists;
  mask_lists[env.id] = my_masks;
  while (mask_lists.size() < expected.size() + 1) {
    ProtocolMessage m = env.ep.recv_expect(msg::MaskReveal);
    if (std::find(expected.begin(), expected.end(), m.from) == expected.end())
      fail(Errc::protocol_violation, "mask reveal from unexpected party " + m.from);
    mask_lists[m.from] = masks_from_json(m.body.at("masks"), pu.offdiag_count());
  }

  env.step = "reconstruct";
  RunOutcome out;
  out.u_ids = own.u_nodes;
  out.layout = layout;
  out.u_raw = reconstruct_scores(noisy, mask_lists, layout, own.u_count());
  out.report.scheme = cfg.scheme;
  out.report.preset = cfg.params.preset_name();
  out.report.width = layout.width;
  out.report.frac_bits = cfg.frac_bits;
  out.report.iterations = cfg.iterations;
  out.report.n = own.u_count();
  out.report.parties = cfg.roster.size();
  return out;
}

}  // namespace

RunOutcome run_party(const ProtocolConfig& cfg, const std::string& party_id, const BipartiteGraph& own,
                     Endpoint& ep) {
  cfg.validate();
  if (own.party_id != party_id) fail(Errc::invalid_params, "graph party id does not match the runner");
  if (cfg.record_transcript && !ep.transcript()) ep.enable_transcript();

  PartyEnv env(cfg, party_id, ep);
  Role role = cfg.party(party_id).role;
  try {
    switch (role) {
      case Role::cryptographer: return run_cryptographer(env, own);
      case Role::calculator: return run_calculator(env, own);
      case Role::contributor: return run_contributor(env, own);
    }
    fail(Errc::roster_misconfig, "unhandled role");
  } catch (const Error& e) {
    if (e.code() != Errc::aborted) {
      for (const auto& p : cfg.others(party_id)) {
        try {
          ep.send(p, msg::Abort, nlohmann::json{{"reason", e.what()}, {"step", env.step}});
        } catch (...) {
        }
      }
      throw Error(Errc::aborted, "step '" + env.step + "' failed: " + e.what());
    }
    throw;
  }
}

std::vector<PartySpec> default_roster(std::span<const BipartiteGraph> graphs) {
  std::vector<PartySpec> roster;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    Role r = i == 0 ? Role::cryptographer : (i == 1 ? Role::calculator : Role::contributor);
    roster.push_back(PartySpec{graphs[i].party_id, r});
  }
  return roster;
}

namespace {

RunOutcome run_roster(const ProtocolConfig& cfg_in, std::span<const BipartiteGraph> graphs, InProcNetwork& net) {
  ProtocolConfig cfg = cfg_in;
  if (cfg.roster.empty()) cfg.roster = default_roster(graphs);
  cfg.validate();
  if (cfg.roster.size() != graphs.size())
    fail(Errc::roster_misconfig, "roster size does not match the number of graphs");

  // pin the layout up front so every party (contributors included) agrees
  if (cfg.width == 0) {
    std::size_t m = 0;
    for (const auto& g : graphs) m += g.v_count();
    cfg.width = pipeline_layout(cfg.frac_bits, m, graphs[0].u_count()).width;
  }

  std::vector<const BipartiteGraph*> by_roster;
  for (const auto& p : cfg.roster) {
    const BipartiteGraph* found = nullptr;
    for (const auto& g : graphs)
      if (g.party_id == p.id) found = &g;
    if (!found) fail(Errc::roster_misconfig, "no graph for roster party '" + p.id + "'");
    by_roster.push_back(found);
  }

  struct Slot {
    std::shared_ptr<Endpoint> ep;
    RunOutcome outcome;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(cfg.roster.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
    slots[i].ep = net.endpoint(cfg.roster[i].id);
    if (cfg.record_transcript) slots[i].ep->enable_transcript();
  }
  for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        slots[i].outcome = run_party(cfg, cfg.roster[i].id, *by_roster[i], *slots[i].ep);
      } catch (...) {
        slots[i].error = std::current_exception();
        net.close_party(cfg.cryptographer_id());
        net.close_party(cfg.calculator_id());
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& s : slots)
    if (s.error) std::rethrow_exception(s.error);

  const std::string calc = cfg.calculator_id();
  std::size_t calc_idx = 0;
  for (std::size_t i = 0; i < cfg.roster.size(); ++i)
    if (cfg.roster[i].id == calc) calc_idx = i;
  for (const auto& s : slots)
    if (s.outcome.u_raw != slots[calc_idx].outcome.u_raw)
      fail(Errc::protocol_violation, "parties reconstructed different score tables");
  RunOutcome result = std::move(slots[calc_idx].outcome);

  nlohmann::json traffic = nlohmann::json::object();
  for (std::size_t i = 0; i < cfg.roster.size(); ++i) {
    const auto& tc = slots[i].ep->traffic();
    nlohmann::json sent = nlohmann::json::object(), recv = nlohmann::json::object();
    for (const auto& [peer, cnt] : tc.sent_msgs)
      sent[peer] = nlohmann::json{{"messages", cnt}, {"bytes", tc.sent_bytes.at(peer)}};
    for (const auto& [peer, cnt] : tc.recv_msgs)
      recv[peer] = nlohmann::json{{"messages", cnt}, {"bytes", tc.recv_bytes.at(peer)}};
    traffic[cfg.roster[i].id] = nlohmann::json{{"sent", sent}, {"received", recv}};
    if (cfg.record_transcript && slots[i].ep->transcript())
      result.transcripts[cfg.roster[i].id] = slots[i].ep->transcript()->text();
  }
  result.report.traffic = std::move(traffic);
  return result;
}

}  // namespace

RunOutcome run_two_party(const ProtocolConfig& cfg, const BipartiteGraph& alice, const BipartiteGraph& bob,
                         InProcNetwork& net) {
  const BipartiteGraph graphs[] = {alice, bob};
  return run_roster(cfg, graphs, net);
}

RunOutcome run_multi_party(const ProtocolConfig& cfg, std::span<const BipartiteGraph> graphs, InProcNetwork& net) {
  if (graphs.size() < 2) fail(Errc::roster_misconfig, "multi-party run needs at least two parties");
  return run_roster(cfg, graphs, net);
}

// --- privacy scan ---------------------------------------------------------------

PrivacyScan scan_transcripts(const ProtocolConfig& cfg, const std::map<std::string, std::string>& transcripts,
                             const std::string& sk_hex) {
  PrivacyScan scan;
  auto violate = [&](const std::string& what) {
    scan.ok = false;
    scan.violations.push_back(what);
  };

  const std::string crypto = cfg.cryptographer_id();
  const std::string calc = cfg.calculator_id();

  for (const auto& [party, text] : transcripts) {
    if (!sk_hex.empty() && text.find(sk_hex) != std::string::npos)
      violate(party + ": transcript contains the serialized secret key");

    Role role = cfg.party(party).role;
    bool seen_masked_scores = false;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;

      ProtocolMessage m;
      try {
        m = deserialize_message(line);
      } catch (const Error& e) {
        violate(party + ": transcript line not a valid protocol message: " + e.what());
        continue;
      }
      if (m.body.is_object() && (m.body.contains("sk") || m.body.contains("p")))
        violate(party + ": message body carries secret key material");

      switch (role) {
        case Role::calculator:
          if (m.type != msg::PublicKey && m.type != msg::EncGraph && m.type != msg::EncMaskList &&
              m.type != msg::RecryptResponse && m.type != msg::NoisyPlainScores && m.type != msg::MaskReveal)
            violate(party + " (calculator): received unexpected type " + m.type);
          if (m.body.is_object() && m.body.contains("values") && m.type != msg::NoisyPlainScores)
            violate(party + " (calculator): plaintext values outside NoisyPlainScores");
          break;
        case Role::cryptographer:
          if (m.type == msg::MaskedScores) seen_masked_scores = true;
          if (m.type != msg::RecryptRequest && m.type != msg::MaskedScores && m.type != msg::MaskReveal)
            violate(party + " (cryptographer): received unexpected type " + m.type);
          if (m.type == msg::MaskReveal && !seen_masked_scores)
            violate(party + " (cryptographer): mask reveal before the masked scores arrived");
          break;
        case Role::contributor:
          if (m.type != msg::PublicKey && m.type != msg::NoisyPlainScores && m.type != msg::MaskReveal)
            violate(party + " (contributor): received unexpected type " + m.type);
          break;
      }
    }
    (void)calc;
    (void)crypto;
  }
  return scan;
}

}  // namespace ppsr
