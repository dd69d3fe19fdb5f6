// Typed client for the clinmcp service API.

import { apiUrl } from "./config.js";

export interface PersonaInfo {
  id: string;
  displayName: string;
  predefinedQuestions: string[];
}

export interface PatientItem {
  id: string;
  name: string;
  birthDate: string;
  gender: string;
}

export interface TurnView {
  question: string;
  answer: string;
  provenance: string[];
}

export interface SessionView {
  sessionId: string;
  personaId: string;
  patientId: string;
  turns: TurnView[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function requestJson<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(apiUrl(path), init);
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = (await response.json()) as { error?: { message?: string } };
      if (body.error?.message) detail = body.error.message;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export function fetchPersonas(): Promise<PersonaInfo[]> {
  return requestJson<PersonaInfo[]>("/api/personas");
}

export function fetchPatients(name?: string): Promise<PatientItem[]> {
  const query = name ? `?name=${encodeURIComponent(name)}` : "";
  return requestJson<PatientItem[]>(`/api/patients${query}`);
}

export async function createSession(personaId: string, patientId: string): Promise<string> {
  const body = await requestJson<{ sessionId: string }>("/api/sessions", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ personaId, patientId }),
  });
  return body.sessionId;
}

export function fetchSession(sessionId: string): Promise<SessionView> {
  return requestJson<SessionView>(`/api/sessions/${encodeURIComponent(sessionId)}`);
}

/** Raw FHIR body of a resource retrieved in this session ("Type/id" reference). */
export function fetchSessionResource(sessionId: string, ref: string): Promise<unknown> {
  return requestJson<unknown>(`/api/sessions/${encodeURIComponent(sessionId)}/resources/${ref}`);
}

/** POST a question; the caller streams SSE from the returned response body. */
export async function postQuestion(sessionId: string, question: string): Promise<Response> {
  const response = await fetch(apiUrl(`/api/sessions/${encodeURIComponent(sessionId)}/messages`), {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ question }),
  });
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = (await response.json()) as { error?: { message?: string } };
      if (body.error?.message) detail = body.error.message;
    } catch {
      // fall through
    }
    throw new ApiError(response.status, detail);
  }
  return response;
}
