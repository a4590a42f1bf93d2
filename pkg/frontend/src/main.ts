import { ApiClient } from "./api.js";
import { lassoSelect, type Pt } from "./lasso.js";
import { ScatterView } from "./scatter.js";
import { SessionStore } from "./store.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function toast(message: string): void {
  const box = el<HTMLDivElement>("toast");
  box.textContent = message;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 4000);
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const store = new SessionStore(api);
  const canvas = el<HTMLCanvasElement>("scatter");
  const view = new ScatterView(
    canvas,
    (id) => store.labels.get(id),
    (id) => store.resultIds.includes(id),
  );

  const summary = await api.getSummary();
  el<HTMLSpanElement>("catalog-info").textContent =
    `${summary.n} points, d=${summary.d}, k=${summary.k} indexes (D=${summary.D})`;
  if (summary.ids.length === 0) {
    toast("catalog too large for full scatter; labeling via id list only");
  }
  view.setData({
    ids: summary.ids,
    xs: Float64Array.from(summary.projection.map((p) => p[0])),
    ys: Float64Array.from(summary.projection.map((p) => p[1])),
  });

  await store.init({
    variant: (el<HTMLSelectElement>("variant").value as "B" | "Ts" | "Ta") ?? "B",
    M: parseInt(el<HTMLInputElement>("ensemble").value, 10) || 1,
    seed: parseInt(el<HTMLInputElement>("seed").value, 10) || 0,
  });

  const queryButton = el<HTMLButtonElement>("run-query");
  const refresh = () => {
    el<HTMLSpanElement>("label-info").textContent =
      `${store.positiveCount} positive / ${store.labels.size - store.positiveCount} negative`;
    queryButton.disabled = !store.canQuery;
    queryButton.title = store.canQuery
      ? "run the search"
      : store.pending
        ? "query in flight"
        : "label at least one positive first";
    const t = store.timings;
    el<HTMLSpanElement>("timing-info").textContent = t
      ? `t_train ${(t.t_train * 1000).toFixed(0)}ms / t_query ${(t.t_query * 1000).toFixed(0)}ms`
      : "";
    el<HTMLSpanElement>("result-info").textContent =
      store.resultIds.length ? `${store.resultIds.length} results` : "";
    if (store.lastError) toast(store.lastError);
    view.render();
  };
  store.subscribe(refresh);
  refresh();

  // lasso interaction: left-drag draws, release labels the capture
  let polygon: Pt[] = [];
  let drawing = false;
  let panning = false;
  let last: Pt = { x: 0, y: 0 };
  const labelMode = (): 0 | 1 | "result-neg" => {
    const mode = (document.querySelector('input[name="mode"]:checked') as HTMLInputElement)
      ?.value;
    return mode === "neg" ? 0 : mode === "result-neg" ? "result-neg" : 1;
  };

  canvas.addEventListener("mousedown", (ev) => {
    const rect = canvas.getBoundingClientRect();
    last = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
    if (ev.shiftKey || ev.button === 1) {
      panning = true;
    } else {
      drawing = true;
      polygon = [last];
    }
  });
  canvas.addEventListener("mousemove", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const p = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
    if (panning) {
      view.pan(p.x - last.x, p.y - last.y);
      last = p;
    } else if (drawing) {
      polygon.push(p);
      view.render(polygon);
    }
  });
  window.addEventListener("mouseup", async () => {
    if (panning) {
      panning = false;
      return;
    }
    if (!drawing) return;
    drawing = false;
    const pos = view.screenPositions();
    const captured = lassoSelect(pos.ids, pos.xs, pos.ys, polygon);
    polygon = [];
    view.render();
    if (captured.length === 0) return;
    const mode = labelMode();
    if (mode === "result-neg") {
      const inResults = captured.filter((id) => store.resultIds.includes(id));
      if (inResults.length === 0) {
        toast("selection contains no result points");
        return;
      }
      await store.adoptResultsAsLabels(inResults, 0);
    } else {
      await store.labelSelection(captured, mode);
    }
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const rect = canvas.getBoundingClientRect();
    view.zoom(ev.deltaY < 0 ? 1.15 : 1 / 1.15, ev.clientX - rect.left, ev.clientY - rect.top);
  });

  queryButton.addEventListener("click", async () => {
    const outcome = await store.runQuery();
    if (outcome) {
      toast(`${outcome.ids.length} positives returned`);
    }
  });

  el<HTMLButtonElement>("download-log").addEventListener("click", () => {
    const blob = new Blob([JSON.stringify(store.log, null, 2)], {
      type: "application/json",
    });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "interaction_log.json";
    a.click();
    URL.revokeObjectURL(a.href);
  });
}

boot().catch((err) => {
  console.error(err);
  const box = document.getElementById("toast");
  if (box) {
    box.textContent = String(err);
    box.classList.add("visible");
  }
});
