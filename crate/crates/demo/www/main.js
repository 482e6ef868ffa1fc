// Expects the wasm-bindgen output (--target web) in ./pkg.
import init, * as nm from "./pkg/nearmatch_demo.js";

const $ = (id) => document.getElementById(id);
const out = $("out");
let original = null;
let modified = null;

function draw(canvas, img) {
  canvas.width = img.width;
  canvas.height = img.height;
  const data = new ImageData(new Uint8ClampedArray(img.rgba()), img.width, img.height);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

function generate() {
  const seed = BigInt($("seed").value || 0);
  original = nm.synthetic_image(seed, 320, 240);
  modified = null;
  draw($("original"), original);
  $("modified").getContext("2d").clearRect(0, 0, 9999, 9999);
  out.textContent = "generated";
}

function apply() {
  try {
    modified = nm.manipulate(original.width, original.height, original.rgba(), $("manip").value, 7n);
    draw($("modified"), modified);
    out.textContent = `${$("manip").value}: ${modified.width}×${modified.height}`;
  } catch (e) {
    out.textContent = `skipped: ${e.message ?? e}`;
  }
}

function compare() {
  if (!modified) {
    out.textContent = "apply a manipulation first";
    return;
  }
  const ha = nm.phash_hex(original.width, original.height, original.rgba());
  const hb = nm.phash_hex(modified.width, modified.height, modified.rgba());
  const c = nm.compare_orb(
    modified.width, modified.height, modified.rgba(),
    original.width, original.height, original.rgba(),
  );
  const ctx = $("modified").getContext("2d");
  const kp = c.keypoints();
  for (let i = 0; i < kp.length; i += 3) {
    ctx.strokeStyle = kp[i + 2] ? "#0c0" : "#e00";
    ctx.beginPath();
    ctx.arc(kp[i], kp[i + 1], 3, 0, 2 * Math.PI);
    ctx.stroke();
  }
  out.textContent =
    `pHash ${ha} vs ${hb}: distance ${nm.phash_distance(ha, hb)}\n` +
    `ORB: ${c.matches} of ${c.query_features} features matched ` +
    `(reference has ${c.reference_features}); green = matched`;
}

await init();
for (const id of nm.manipulation_ids()) {
  $("manip").add(new Option(id, id));
}
$("generate").onclick = generate;
$("apply").onclick = apply;
$("compare").onclick = compare;
generate();
