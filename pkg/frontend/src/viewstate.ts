/** Pure view-state reducer.
 *
 * Every input source (gesture websocket, pointer, keyboard) is translated
 * into the same InterfaceEvent vocabulary and folded through applyEvent,
 * so replaying a recorded trace reproduces the identical final state.
 */

import type { InterfaceEvent, Stats } from "./types.js";

export interface Bounds {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface ViewState {
  centerX: number; // layout coords
  centerY: number;
  scale: number; // layout units per pixel
  viewW: number; // viewport pixels
  viewH: number;
  zoomLevels: number;
  bounds: Bounds;
  cursor: { x: number; y: number } | null; // normalized [0,1]^2, y down
  dragging: boolean;
  selectedId: string | null;
}

const ZOOM_FACTOR = 1.25;
export const PICK_RADIUS_PX = 24;

export function initialView(stats: Stats, viewW: number, viewH: number): ViewState {
  const [x0, y0, x1, y1] = stats.bounds;
  const spanX = Math.max(x1 - x0, 1e-9);
  const spanY = Math.max(y1 - y0, 1e-9);
  // fit the whole collection with a small margin
  const scale = Math.max(spanX / viewW, spanY / viewH) * 1.05;
  return {
    centerX: (x0 + x1) / 2,
    centerY: (y0 + y1) / 2,
    scale,
    viewW,
    viewH,
    zoomLevels: stats.zoom_levels,
    bounds: { x0, y0, x1, y1 },
    cursor: null,
    dragging: false,
    selectedId: null,
  };
}

/** zoom level = clamp(floor(-log2(view width in layout units / bounds width)), 0, Z-1) */
export function zoomOf(state: ViewState): number {
  const viewSpan = state.viewW * state.scale;
  const boundsSpan = Math.max(state.bounds.x1 - state.bounds.x0, 1e-9);
  const level = Math.floor(-Math.log2(viewSpan / boundsSpan));
  return Math.min(Math.max(level, 0), state.zoomLevels - 1);
}

export function visibleRect(state: ViewState): Bounds {
  const halfW = (state.viewW * state.scale) / 2;
  const halfH = (state.viewH * state.scale) / 2;
  return {
    x0: state.centerX - halfW,
    y0: state.centerY - halfH,
    x1: state.centerX + halfW,
    y1: state.centerY + halfH,
  };
}

/** Screen pixels (y down) -> layout coordinates (y up). */
export function screenToLayout(state: ViewState, px: number, py: number): [number, number] {
  return [
    state.centerX + (px - state.viewW / 2) * state.scale,
    state.centerY - (py - state.viewH / 2) * state.scale,
  ];
}

export function layoutToScreen(state: ViewState, lx: number, ly: number): [number, number] {
  return [
    state.viewW / 2 + (lx - state.centerX) / state.scale,
    state.viewH / 2 - (ly - state.centerY) / state.scale,
  ];
}

function zoomAbout(state: ViewState, factor: number): ViewState {
  const next = state.scale * factor;
  let anchorX = state.centerX;
  let anchorY = state.centerY;
  if (state.cursor) {
    [anchorX, anchorY] = screenToLayout(
      state, state.cursor.x * state.viewW, state.cursor.y * state.viewH);
  }
  return {
    ...state,
    scale: next,
    centerX: anchorX + (state.centerX - anchorX) * factor,
    centerY: anchorY + (state.centerY - anchorY) * factor,
  };
}

export type PickFn = (state: ViewState, cursorPx: [number, number]) => string | null;

/** Fold one interface event into the view. Unknown kinds are ignored. */
export function applyEvent(
  state: ViewState,
  ev: InterfaceEvent,
  pick: PickFn = () => null,
): ViewState {
  switch (ev.kind) {
    case "ZoomIn":
      return zoomAbout(state, 1 / ZOOM_FACTOR);
    case "ZoomOut":
      return zoomAbout(state, ZOOM_FACTOR);
    case "ScrollUp":
      return { ...state, centerY: state.centerY + 0.25 * state.viewH * state.scale };
    case "ScrollDown":
      return { ...state, centerY: state.centerY - 0.25 * state.viewH * state.scale };
    case "AdvanceRight":
      return { ...state, centerX: state.centerX + 0.25 * state.viewW * state.scale };
    case "AdvanceLeft":
      return { ...state, centerX: state.centerX - 0.25 * state.viewW * state.scale };
    case "CursorMove": {
      const cursor = { x: ev.x ?? 0.5, y: ev.y ?? 0.5 };
      if (state.dragging && state.cursor) {
        // drag-pan: the grabbed layout point stays under the cursor
        const dx = (cursor.x - state.cursor.x) * state.viewW * state.scale;
        const dy = (cursor.y - state.cursor.y) * state.viewH * state.scale;
        return { ...state, cursor, centerX: state.centerX - dx, centerY: state.centerY + dy };
      }
      return { ...state, cursor };
    }
    case "SelectDown": {
      if (state.cursor) {
        const hit = pick(state, [state.cursor.x * state.viewW, state.cursor.y * state.viewH]);
        if (hit !== null) {
          return { ...state, selectedId: hit };
        }
      }
      return { ...state, dragging: true };
    }
    case "SelectUp":
      return { ...state, dragging: false };
    case "Refresh": {
      const stats: Stats = {
        objects: 0, points: 0, tiles: 0, base_budget: 0, build_hash: "",
        zoom_levels: state.zoomLevels,
        bounds: [state.bounds.x0, state.bounds.y0, state.bounds.x1, state.bounds.y1],
      };
      return initialView(stats, state.viewW, state.viewH);
    }
    case "SwitchHands":
    case "Sonify":
      return state; // no view effect
    default:
      console.info(`ignoring unknown interface event kind: ${ev.kind}`);
      return state;
  }
}

export function replay(
  initial: ViewState,
  events: InterfaceEvent[],
  pick: PickFn = () => null,
): ViewState {
  let state = initial;
  for (const ev of events) {
    state = applyEvent(state, ev, pick);
  }
  return state;
}
