export interface Stats {
  objects: number;
  points: number;
  bounds: [number, number, number, number]; // x0, y0, x1, y1
  zoom_levels: number;
  base_budget: number;
  tiles: number;
  build_hash: string;
}

export interface ViewportSample {
  id: string;
  x: number;
  y: number;
}

export interface ViewportPayload {
  samples: ViewportSample[];
  circles: [number, number][];
}

export interface TilePayload {
  zoom: number;
  tx: number;
  ty: number;
  members: { id: string; x: number; y: number; sample: boolean }[];
  sprite: string | null;
  sprite_map: Record<string, [number, number, number, number]>;
}

export type EventKind =
  | "ZoomIn" | "ZoomOut"
  | "ScrollUp" | "ScrollDown"
  | "AdvanceLeft" | "AdvanceRight"
  | "CursorMove" | "SelectDown" | "SelectUp"
  | "SwitchHands" | "Refresh" | "Sonify";

export interface InterfaceEvent {
  kind: EventKind | string;
  timestamp: number;
  magnitude: number;
  x?: number; // CursorMove: normalized [0,1] viewport coordinates
  y?: number;
}

export interface SonifyParams {
  gain: number;
  pitch: number;
  texture: number;
}
