import init, { Scene, region_curve } from "./pkg/deepbf_web.js";

const $ = (id) => document.getElementById(id);
let scene = null;

function status(msg) {
  $("status").textContent = msg;
}

function params() {
  return {
    method: $("method").value,
    factor: Number($("factor").value),
    dr: Number($("dr").value),
    depth: Number($("depth").value),
    seed: Number($("seed").value),
  };
}

function drawBmode() {
  if (!scene) return;
  const p = params();
  const w = scene.width(), h = scene.height();
  const g = scene.bmode(p.method, p.factor, p.seed, p.dr);
  const c = $("bmode");
  c.width = w;
  c.height = h;
  const ctx = c.getContext("2d");
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < g.length; i++) {
    img.data[4 * i] = img.data[4 * i + 1] = img.data[4 * i + 2] = g[i];
    img.data[4 * i + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  drawProfile();
}

function drawProfile() {
  if (!scene) return;
  const p = params();
  const prof = scene.lateral_profile(p.method, p.factor, p.seed, p.depth);
  const c = $("profile");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#c22";
  ctx.beginPath();
  prof.forEach((db, i) => {
    const x = (i / (prof.length - 1)) * c.width;
    const y = (-db / 60) * c.height;
    if (i === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

async function simulate() {
  status("Simulating...");
  await new Promise((r) => setTimeout(r, 20));
  try {
    scene = new Scene($("phantom").value, Number($("seed").value));
    status("Ready.");
    drawBmode();
  } catch (e) {
    status("Error: " + e);
  }
}

function guarded(f) {
  return () => {
    try { f(); } catch (e) { status("Error: " + e); }
  };
}

await init();
$("simulate").onclick = simulate;
$("method").onchange = guarded(drawBmode);
$("factor").onchange = guarded(drawBmode);
$("dr").oninput = guarded(() => { $("drv").textContent = $("dr").value; drawBmode(); });
$("depth").oninput = guarded(() => { $("depthv").textContent = $("depth").value; drawProfile(); });
$("regions").onclick = guarded(() => {
  const counts = region_curve(Number($("ch").value), Number($("seed").value), 1024);
  $("regionout").textContent = Array.from(counts)
    .map((n, i) => `${2 ** i} samples: ${n} regions`)
    .join("\n");
});
simulate();
