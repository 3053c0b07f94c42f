#include "kecrs/generator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kecrs/errors.hpp"
#include "kecrs/text.hpp"

namespace kecrs {

Vocabulary::Vocabulary() {
    for (const char* t : {"__pad__", "__unk__", "__start__", "__end__", kSplitToken}) add(t);
}

int Vocabulary::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw LookupError("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::vector<std::string> words;
    for (int i : ids) {
        if (i >= kReserved || i == kUnk) words.push_back(token(i));
    }
    return text::join(words, " ");
}

void Vocabulary::bind_entities(const KnowledgeGraph& graph) {
    entity_tokens_.clear();
    for (std::size_t i = kReserved; i < tokens_.size(); ++i) {
        if (auto e = graph.find_by_name(tokens_[i])) entity_tokens_.emplace(static_cast<int>(i), *e);
    }
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json ent = nlohmann::json::array();
    for (const auto& [tok, e] : entity_tokens_) ent.push_back({tok, e});
    return {{"tokens", tokens_}, {"entity_tokens", ent}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    Vocabulary v;
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    if (tokens.size() < kReserved) throw IngestionError("vocabulary is missing reserved tokens");
    for (std::size_t i = 0; i < kReserved; ++i) {
        if (tokens[i] != v.tokens_[i]) throw IngestionError("vocabulary reserved token mismatch at id " + std::to_string(i));
    }
    for (std::size_t i = kReserved; i < tokens.size(); ++i) v.add(tokens[i]);
    for (const auto& pair : j.value("entity_tokens", nlohmann::json::array())) {
        const int tok = pair.at(0).get<int>();
        if (tok < 0 || static_cast<std::size_t>(tok) >= v.size()) throw IngestionError("entity token id out of range");
        v.entity_tokens_.emplace(tok, pair.at(1).get<EntityId>());
    }
    return v;
}

// ---------------------------------------------------------------------------

GeneratorConfig GeneratorConfig::full_scale() {
    GeneratorConfig c;
    c.transformer.d_model = 300;
    c.transformer.heads = 2;
    c.transformer.enc_layers = 2;
    c.transformer.dec_layers = 2;
    c.d_f = 200;
    return c;
}

nlohmann::json GeneratorConfig::to_json() const {
    return {{"d_model", transformer.d_model}, {"heads", transformer.heads},       {"ffn", transformer.ffn},
            {"enc_layers", transformer.enc_layers}, {"dec_layers", transformer.dec_layers}, {"d_f", d_f},
            {"max_context", max_context},         {"max_response", max_response}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.transformer.d_model = j.value("d_model", c.transformer.d_model);
    c.transformer.heads = j.value("heads", c.transformer.heads);
    c.transformer.ffn = j.value("ffn", c.transformer.ffn);
    c.transformer.enc_layers = j.value("enc_layers", c.transformer.enc_layers);
    c.transformer.dec_layers = j.value("dec_layers", c.transformer.dec_layers);
    c.d_f = j.value("d_f", c.d_f);
    c.max_context = j.value("max_context", c.max_context);
    c.max_response = j.value("max_response", c.max_response);
    return c;
}

std::vector<EntityId> boe_targets(const KnowledgeGraph& graph, std::span<const EntityId> recommended) {
    std::set<EntityId> out;
    for (EntityId item : recommended) {
        for (EntityId n : one_hop_neighbors(graph, item)) out.insert(n);
    }
    return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& cfg, Vocabulary vocab, const Matrix& entity_table, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    if (entity_table.cols() != cfg.d_f) {
        throw ShapeError("generator: entity table width " + std::to_string(entity_table.cols()) +
                         " differs from d_f " + std::to_string(cfg.d_f));
    }
    Rng rng = Rng::derive(seed, 2);
    const Eigen::Index d = cfg.transformer.d_model;
    const auto v = static_cast<Eigen::Index>(vocab_.size());
    params_.add("gen.embedding", uniform_matrix(v, d, 0.1, rng));
    TransformerParams::create(params_, "gen", cfg.transformer, rng);
    Linear::create(params_, "gen.phi", d + cfg.d_f, d, rng);
    params_.add("gen.b_res", Matrix::Zero(1, v));
    params_.add("gen.w_align", glorot_matrix(d + cfg.d_f, cfg.d_f, rng));
    params_.add("gen.b_res_entity", Matrix::Zero(1, entity_table.rows()));
    Linear::create(params_, "gen.phi_prime", cfg.d_f, d, rng);
    params_.add("gen.b_ce", Matrix::Zero(1, v));
    params_.add("frozen.H", entity_table, false);
    bind();
}

Generator::Generator(const GeneratorConfig& cfg, Vocabulary vocab, ParamStore params)
    : cfg_(cfg), vocab_(std::move(vocab)), params_(std::move(params)) {
    bind();
    if (static_cast<std::size_t>(embedding_->value.rows()) != vocab_.size()) {
        throw ShapeError("generator checkpoint embedding rows differ from the vocabulary size");
    }
}

Generator::Generator(const Generator& other) : cfg_(other.cfg_), vocab_(other.vocab_), params_(other.params_) {
    bind();
}

void Generator::bind() {
    embedding_ = &params_.get("gen.embedding");
    transformer_ = TransformerParams::bind(params_, "gen", cfg_.transformer);
    phi_ = Linear::bind(params_, "gen.phi");
    b_res_ = &params_.get("gen.b_res");
    w_align_ = &params_.get("gen.w_align");
    b_res_entity_ = &params_.get("gen.b_res_entity");
    phi_prime_ = Linear::bind(params_, "gen.phi_prime");
    b_ce_ = &params_.get("gen.b_ce");
    frozen_h_ = &params_.get("frozen.H");
    frozen_h_->trainable = false;
}

std::vector<int> Generator::context_ids(std::span<const Message> context) const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < context.size(); ++i) {
        if (i > 0) ids.push_back(Vocabulary::kSplit);
        for (const auto& t : message_tokens(context[i])) ids.push_back(vocab_.id(t));
    }
    if (ids.empty()) return {Vocabulary::kBos};
    const auto limit = static_cast<std::size_t>(cfg_.max_context);
    if (ids.size() > limit) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(limit));
    return ids;
}

namespace {

ad::Var embed(ad::Tape& tape, const ad::Var& em, std::span<const int> ids) {
    std::vector<int> rows(ids.begin(), ids.end());
    ad::Var x = ad::gather_rows(em, rows);
    return x + tape.constant(sinusoidal_positions(x.rows(), x.cols()));
}

}  // namespace

ad::Var Generator::encode_context(ad::Tape& tape, const ad::Var& em, std::span<const int> ids) const {
    if (ids.empty()) throw LengthError("encode_context: empty token sequence");
    return run_encoder(tape, transformer_, embed(tape, em, ids));
}

Matrix Generator::encode_context(std::span<const int> ids) const {
    ad::Tape tape;
    return encode_context(tape, tape.param(*embedding_), ids).value();
}

ad::Var Generator::decoder_hidden(ad::Tape& tape, const ad::Var& em, const ad::Var& memory,
                                  std::span<const int> prefix) const {
    return run_decoder(tape, transformer_, embed(tape, em, prefix), memory);
}

ad::Var Generator::joint_rows(ad::Tape& tape, const ad::Var& hidden, const RowVector& c_e) const {
    if (c_e.size() != cfg_.d_f) throw ShapeError("generator: c_E width differs from d_f");
    const ad::Var parts[] = {hidden, ad::repeat_rows(tape.constant(c_e), hidden.rows())};
    return ad::concat_cols(parts);
}

ad::Var Generator::vocab_logits(ad::Tape& tape, const ad::Var& em, const ad::Var& joint) const {
    return ad::add_row(ad::matmul_nt(phi_(tape, joint), em), tape.param(*b_res_));
}

ad::Var Generator::entity_probs(ad::Tape& tape, const ad::Var& joint) const {
    ad::Var scores = ad::matmul_nt(ad::matmul(joint, tape.param(*w_align_)), tape.param(*frozen_h_));
    return ad::softmax_rows(ad::add_row(scores, tape.param(*b_res_entity_)));
}

RowVector Generator::infusion_target(std::span<const EntityId> history) const {
    RowVector d = RowVector::Zero(static_cast<Eigen::Index>(vocab_.size()));
    const std::set<EntityId> seen(history.begin(), history.end());
    for (const auto& [tok, e] : vocab_.entity_token_map()) {
        if (seen.count(e) != 0) d(tok) = 1.0;
    }
    return d;
}

ad::Var Generator::infusion_loss(ad::Tape& tape, const ad::Var& em, const RowVector& c_e,
                                 std::span<const EntityId> history) const {
    if (c_e.size() != cfg_.d_f) throw ShapeError("generator: c_E width differs from d_f");
    ad::Var s = ad::add_row(ad::matmul_nt(phi_prime_(tape, tape.constant(c_e)), em), tape.param(*b_ce_));
    ad::Var diff = s - tape.constant(infusion_target(history));
    return ad::sum_all(ad::square(diff)) * (1.0 / static_cast<double>(vocab_.size()));
}

namespace {

std::vector<int> with_bos(std::span<const int> response) {
    std::vector<int> in{Vocabulary::kBos};
    in.insert(in.end(), response.begin(), response.end());
    return in;
}

std::vector<int> with_eos(std::span<const int> response) {
    std::vector<int> out(response.begin(), response.end());
    out.push_back(Vocabulary::kEos);
    return out;
}

}  // namespace

LossBreakdown Generator::loss_and_grad(std::span<const GenExample> batch, const LossWeights& weights,
                                       bool with_grad) {
    LossBreakdown out;
    out.lambda1 = weights.lambda1;
    out.lambda2 = weights.lambda2;
    if (batch.empty()) return out;
    for (const GenExample& ex : batch) {
        if (!ex.boe_targets.empty()) ++out.boe_examples;
    }
    const double n = static_cast<double>(batch.size());
    const double n_boe = static_cast<double>(std::max<std::size_t>(out.boe_examples, 1));

    for (const GenExample& ex : batch) {
        if (ex.response.size() > static_cast<std::size_t>(cfg_.max_response)) {
            throw LengthError("response longer than n_y = " + std::to_string(cfg_.max_response));
        }
        ad::Tape tape;
        ad::Var em = tape.param(*embedding_);
        ad::Var memory = encode_context(tape, em, ex.context);
        const std::vector<int> input = with_bos(ex.response);
        const std::vector<int> target = with_eos(ex.response);
        ad::Var joint = joint_rows(tape, decoder_hidden(tape, em, memory, input), ex.c_e);

        ad::Var logp = ad::log_softmax_rows(vocab_logits(tape, em, joint));
        std::vector<int> rows(target.size());
        for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = static_cast<int>(j);
        ad::Var l_gen = ad::sum_entries(logp, rows, target) * (-1.0 / static_cast<double>(target.size()));
        ad::Var root = l_gen * (weights.gen / n);
        out.l_gen += l_gen.scalar() / n;

        if (!ex.boe_targets.empty()) {
            ad::Var p_boe = ad::sigmoid(ad::column_sums(entity_probs(tape, joint)));
            std::vector<int> zeros(ex.boe_targets.size(), 0);
            std::vector<int> cols(ex.boe_targets.begin(), ex.boe_targets.end());
            ad::Var l_boe = ad::sum_entries(ad::log(p_boe), zeros, cols) * -1.0;
            out.l_boe += l_boe.scalar() / n_boe;
            root = root + l_boe * (weights.lambda1 / n_boe);
        }

        ad::Var l_inf = infusion_loss(tape, em, ex.c_e, ex.history);
        out.l_infuse += l_inf.scalar() / n;
        root = root + l_inf * (weights.lambda2 / n);

        if (with_grad) tape.backward(root);
    }
    out.l_total = weights.gen * out.l_gen + weights.lambda1 * out.l_boe + weights.lambda2 * out.l_infuse;
    return out;
}

Matrix Generator::teacher_forced_probs(const GenExample& ex) const {
    ad::Tape tape;
    ad::Var em = tape.param(*embedding_);
    ad::Var memory = encode_context(tape, em, ex.context);
    ad::Var joint = joint_rows(tape, decoder_hidden(tape, em, memory, with_bos(ex.response)), ex.c_e);
    return ad::softmax_rows(vocab_logits(tape, em, joint)).value();
}

RowVector Generator::boe_probability(const GenExample& ex) const {
    ad::Tape tape;
    ad::Var em = tape.param(*embedding_);
    ad::Var memory = encode_context(tape, em, ex.context);
    ad::Var joint = joint_rows(tape, decoder_hidden(tape, em, memory, with_bos(ex.response)), ex.c_e);
    return ad::sigmoid(ad::column_sums(entity_probs(tape, joint))).value().row(0);
}

double Generator::infusion_distance(const RowVector& c_e, std::span<const EntityId> history) const {
    ad::Tape tape;
    return infusion_loss(tape, tape.param(*embedding_), c_e, history).scalar();
}

Matrix Generator::project_entities(const Matrix& rows) const {
    ad::Tape tape;
    return phi_prime_(tape, tape.constant(rows)).value();
}

DecoderState Generator::start(std::span<const int> context) const {
    DecoderState s;
    s.memory = encode_context(context);
    s.prefix = {Vocabulary::kBos};
    s.boe_accumulator = RowVector::Zero(frozen_h_->value.rows());
    return s;
}

StepOutput Generator::decode_step(DecoderState& state, const RowVector& c_e) const {
    if (state.prefix.empty() || state.prefix.front() != Vocabulary::kBos) {
        throw LengthError("decode_step: prefix must start with BOS");
    }
    if (state.generated() > static_cast<std::size_t>(cfg_.max_response)) {
        throw LengthError("decode_step: prefix exceeds n_y = " + std::to_string(cfg_.max_response));
    }
    ad::Tape tape;
    ad::Var em = tape.param(*embedding_);
    ad::Var hidden = decoder_hidden(tape, em, tape.constant(state.memory), state.prefix);
    ad::Var last = tape.constant(hidden.value().bottomRows(1));
    ad::Var joint = joint_rows(tape, last, c_e);
    StepOutput out;
    out.p_res = ad::softmax_rows(vocab_logits(tape, em, joint)).value().row(0);
    state.boe_accumulator += entity_probs(tape, joint).value().row(0);
    state.step_hiddens.push_back(last.value().row(0));
    out.p_boe = state.boe_accumulator.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    return out;
}

std::vector<int> Generator::generate(std::span<const int> context, const RowVector& c_e, double lambda3) const {
    if (lambda3 < 0.0) throw LookupError("lambda3 must be nonnegative");
    DecoderState state = start(context);
    std::vector<int> out;
    const auto& ent = vocab_.entity_token_map();
    while (out.size() < static_cast<std::size_t>(cfg_.max_response)) {
        const StepOutput step = decode_step(state, c_e);
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < step.p_res.size(); ++t) {
            if (t == Vocabulary::kPad || t == Vocabulary::kBos) continue;
            double score = step.p_res(t);
            if (lambda3 > 0.0) {
                auto it = ent.find(static_cast<int>(t));
                if (it != ent.end()) score += lambda3 * step.p_boe(it->second);
            }
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(t);
            }
        }
        if (best == Vocabulary::kEos) break;
        out.push_back(best);
        state.prefix.push_back(best);
    }
    return out;
}

void Generator::save(const std::filesystem::path& dir) const {
    save_checkpoint(dir, params_, {{"kind", "generator"}, {"config", cfg_.to_json()}, {"vocab", vocab_.to_json()}});
}

Generator Generator::load(const std::filesystem::path& dir) {
    nlohmann::json meta;
    ParamStore store = load_checkpoint(dir, &meta);
    if (meta.value("kind", "") != "generator") {
        throw IngestionError("checkpoint in " + dir.string() + " is not a generator checkpoint");
    }
    return Generator(GeneratorConfig::from_json(meta.at("config")), Vocabulary::from_json(meta.at("vocab")),
                     std::move(store));
}

}  // namespace kecrs
