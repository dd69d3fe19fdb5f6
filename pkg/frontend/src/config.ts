// API base URL resolution. Same-origin by default; a host page (or test)
// can set globalThis.CLINMCP_API_BASE before the app module loads.

declare global {
  // eslint-disable-next-line no-var
  var CLINMCP_API_BASE: string | undefined;
}

export function apiBase(): string {
  return globalThis.CLINMCP_API_BASE ?? "";
}

export function apiUrl(path: string): string {
  return `${apiBase()}${path}`;
}
