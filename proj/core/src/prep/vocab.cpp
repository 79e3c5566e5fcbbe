#include "velvet/prep/vocab.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "velvet/error.hpp"

namespace velvet::prep {

namespace {

// Whole words: synthetic report templates first, then general radiology terms.
constexpr const char* kWords = R"(
there is a an the in of and with no not are seen total
small medium large faint bright ellipsoid box tube
upper lower left right central region finding findings one two three four
abdomen abdominal acute adjacent adrenal air airway allergic anterior aorta aortic apex apical appearance
appendix arterial artery ascites atelectasis atrophy attenuation axial axis bilateral bile biliary bladder
blood body bone bones bowel brain breast bronchial calcification calcified calculus cardiac cartilage
cavity cecum cerebral change changes chest chronic clear colon compatible compression consolidation
contrast cortex cortical cyst cystic defect degenerative density dependent diameter diaphragm diffuse
dilatation dilated disc disease distal duct ductal edema effusion emphysema endometrium enhancement
enhancing enlarged enlargement esophagus evaluation evidence exam examination expected extensive
fat fatty femoral fibrosis field filling fluid focal fracture free function gallbladder gas gastric
glass gland ground heart hemorrhage hepatic hernia hilar homogeneous hyperdense hypodense identified
ileum iliac impression increased inferior inflammation intact intestinal intra kidney kidneys lateral
lesion lesions level ligament limited liver lobe lobes lumbar lung lungs lymph mass masses mediastinal
mediastinum mild minimal moderate multiple muscle nodular nodule nodules node nodes normal obstruction
opacity opacities organ ovary pancreas pancreatic parenchyma pattern pelvic pelvis pericardial peripheral
pleural pneumonia pneumothorax portal posterior previous prior prominent prostate proximal pulmonary
radiograph rectum remarkable renal residual retroperitoneal rib ribs scan segment severe shadow shape
sigmoid signal significant simple size soft spine spinal spleen splenic stable stenosis stomach structure
structures subcutaneous superior surgical suspicious symmetric thickening thoracic thorax thyroid tissue
trachea tract tumor ulcer unchanged unremarkable ureter uterus vascular vein venous ventricle vertebra
vertebral vessel vessels volume wall within without zone measuring measures approximately cm mm
likely possible probable consistent suggest suggests suggestive noted demonstrated present absent
status post follow up recommend recommended further imaging ct mri ultrasound visualized
)";

constexpr const char* kContinuations = R"(
s es ed ing ly al ar ic ia is ity ous ion ation ations ment ments ness ful less er est ive
monia itis osis oma omas ectomy otomy scopy graphy gram ology logic logical
)";

std::vector<std::string> builtin_body() {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto push = [&](const std::string& t) {
    if (seen.insert(t).second) out.push_back(t);
  };
  std::istringstream words(kWords);
  for (std::string w; words >> w;) push(w);
  for (char c = 'a'; c <= 'z'; ++c) push(std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) push(std::string(1, c));
  for (char c : std::string(",.:;!?()[]/-+%'\"&<>=*#")) push(std::string(1, c));
  std::istringstream cont(kContinuations);
  for (std::string w; cont >> w;) push("##" + w);
  for (char c = 'a'; c <= 'z'; ++c) push("##" + std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) push("##" + std::string(1, c));
  return out;
}

}  // namespace

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  v.tokens_ = tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<std::int64_t>(i)).second)
      fail(Errc::ConfigError, "duplicate vocabulary token '" + tokens[i] + "'");
  }
  const std::vector<std::string> fixed = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (i >= tokens.size() || tokens[i] != fixed[i])
      fail(Errc::ConfigError, "vocabulary must start with [PAD],[UNK],[CLS],[MASK]");
  int n = 0;
  while (4 + static_cast<std::size_t>(n) < tokens.size() && tokens[4 + n] == "[SENT_" + std::to_string(n + 1) + "]")
    ++n;
  if (n == 0) fail(Errc::ConfigError, "vocabulary has no [SENT_i] tokens");
  v.max_num_sent_ = n;
  return v;
}

Vocabulary Vocabulary::from_body(const std::vector<std::string>& body, int max_num_sent) {
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
  for (int i = 1; i <= max_num_sent; ++i) tokens.push_back("[SENT_" + std::to_string(i) + "]");
  tokens.insert(tokens.end(), body.begin(), body.end());
  return from_tokens(tokens);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(tokens);
}

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary v = from_body(builtin_body());
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::int64_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

std::int64_t Vocabulary::sent_id(int sentence_index) const {
  if (sentence_index < 1 || sentence_index > max_num_sent_)
    fail(Errc::CapExceeded, "sentence index " + std::to_string(sentence_index) + " exceeds vocabulary");
  return 3 + sentence_index;
}

}  // namespace velvet::prep
