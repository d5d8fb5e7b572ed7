import { Api } from "./api.js";
import { Sonifier } from "./audio.js";
import { sonifyParamsOf, translatePointer, type PointerInput } from "./events.js";
import { Overlay } from "./overlay.js";
import { Renderer, type SpriteRef } from "./renderer.js";
import type { InterfaceEvent, ViewportPayload } from "./types.js";
import {
  applyEvent, initialView, visibleRect, zoomOf,
  PICK_RADIUS_PX, type ViewState,
} from "./viewstate.js";
import { connectEvents } from "./ws.js";

const api = new Api();

async function boot(): Promise<void> {
  const glCanvas = document.getElementById("points") as HTMLCanvasElement;
  const thumbCanvas = document.getElementById("thumbs") as HTMLCanvasElement;
  const root = document.getElementById("overlay-root") as HTMLElement;

  const stats = await api.stats();
  const overlay = new Overlay(root, api);
  const sonifier = new Sonifier();
  const renderer = new Renderer(glCanvas, thumbCanvas);

  const resize = () => {
    for (const canvas of [glCanvas, thumbCanvas]) {
      canvas.width = window.innerWidth;
      canvas.height = window.innerHeight;
    }
  };
  resize();

  let state: ViewState = initialView(stats, glCanvas.width, glCanvas.height);
  window.addEventListener("resize", () => {
    resize();
    state = { ...state, viewW: glCanvas.width, viewH: glCanvas.height };
  });

  let payload: ViewportPayload = { samples: [], circles: [] };
  let fetchKey = "";
  let fetching = false;

  const sprites = new Map<string, SpriteRef>();
  const loadedTiles = new Set<string>();
  const sheetCache = new Map<string, HTMLImageElement>();

  async function loadTileSprites(zoom: number): Promise<void> {
    const rect = visibleRect(state);
    const grid = 2 ** zoom;
    const spanX = (state.bounds.x1 - state.bounds.x0) || 1e-9;
    const spanY = (state.bounds.y1 - state.bounds.y0) || 1e-9;
    const clampT = (v: number) => Math.min(Math.max(v, 0), grid - 1);
    const tx0 = clampT(Math.floor(((rect.x0 - state.bounds.x0) / spanX) * grid));
    const tx1 = clampT(Math.floor(((rect.x1 - state.bounds.x0) / spanX) * grid));
    const ty0 = clampT(Math.floor(((rect.y0 - state.bounds.y0) / spanY) * grid));
    const ty1 = clampT(Math.floor(((rect.y1 - state.bounds.y0) / spanY) * grid));
    for (let tx = tx0; tx <= tx1; tx++) {
      for (let ty = ty0; ty <= ty1; ty++) {
        const key = `${zoom}/${tx}/${ty}`;
        if (loadedTiles.has(key)) {
          continue;
        }
        loadedTiles.add(key);
        try {
          const tile = await api.tile(zoom, tx, ty);
          if (!tile.sprite) {
            continue;
          }
          let image = sheetCache.get(tile.sprite);
          if (!image) {
            image = new Image();
            image.src = api.spriteUrl(tile.sprite);
            sheetCache.set(tile.sprite, image);
            await new Promise((resolve) => {
              image!.onload = resolve;
              image!.onerror = resolve;
            });
          }
          for (const [id, rect2] of Object.entries(tile.sprite_map)) {
            sprites.set(`${zoom}:${id}`, { image, rect: rect2 });
          }
        } catch {
          loadedTiles.delete(key); // retry on a later frame
        }
      }
    }
  }

  async function refreshViewport(): Promise<void> {
    const zoom = zoomOf(state);
    const rect = visibleRect(state);
    const key = [zoom, rect.x0.toFixed(3), rect.y0.toFixed(3),
                 rect.x1.toFixed(3), rect.y1.toFixed(3)].join("|");
    if (key === fetchKey || fetching) {
      return;
    }
    fetching = true;
    try {
      const fresh = await api.viewport(rect, zoom);
      payload = fresh;
      fetchKey = key;
      renderer.setCircles(fresh.circles);
      overlay.setError(null);
      void loadTileSprites(zoom);
    } catch (err) {
      overlay.setError(`viewport fetch failed: ${err}`); // keep last frame
    } finally {
      fetching = false;
    }
  }

  const pickFn = (s: ViewState, px: [number, number]) =>
    renderer.pick(s, payload.samples, px[0], px[1], PICK_RADIUS_PX);

  function dispatch(ev: InterfaceEvent): void {
    const sonify = sonifyParamsOf(ev);
    if (sonify) {
      sonifier.apply(sonify);
      return;
    }
    const before = state.selectedId;
    state = applyEvent(state, ev, pickFn);
    if (state.selectedId !== before) {
      void overlay.showObject(state.selectedId);
    }
  }

  // pointer + keyboard produce the same event vocabulary as the websocket
  const now = () => performance.now() / 1000;
  const pointer = (input: Omit<PointerInput, "viewW" | "viewH" | "timestamp">) =>
    translatePointer({ ...input, viewW: state.viewW, viewH: state.viewH,
                       timestamp: now() }).forEach(dispatch);

  thumbCanvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    pointer({ type: "wheel", x: e.offsetX, y: e.offsetY, deltaY: e.deltaY });
  }, { passive: false });
  thumbCanvas.addEventListener("mousedown",
    (e) => pointer({ type: "down", x: e.offsetX, y: e.offsetY }));
  thumbCanvas.addEventListener("mousemove",
    (e) => pointer({ type: "move", x: e.offsetX, y: e.offsetY }));
  window.addEventListener("mouseup", () => pointer({ type: "up" }));
  window.addEventListener("keydown", (e) => {
    if (e.key === "m") {
      const muted = sonifier.toggle();
      overlay.setError(muted ? null : "sound on");
      return;
    }
    pointer({ type: "key", key: e.key });
  });

  connectEvents(dispatch, (connected) =>
    overlay.setError(connected ? null : "event feed disconnected"));

  const frame = (t: number) => {
    overlay.tick(t);
    void refreshViewport();
    const zoom = zoomOf(state);
    const zoomSprites = new Map<string, SpriteRef>();
    for (const sample of payload.samples) {
      const ref = sprites.get(`${zoom}:${sample.id}`);
      if (ref) {
        zoomSprites.set(sample.id, ref);
      }
    }
    renderer.render(state, zoom, payload.samples, zoomSprites);
    overlay.update(state);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

boot().catch((err) => {
  const root = document.getElementById("overlay-root");
  if (root) {
    root.textContent = `failed to start: ${err}`;
  }
  console.error(err);
});
