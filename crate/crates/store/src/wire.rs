//! S3-compatible REST backend covering the multipart-copy subset: head,
//! direct copy, create/copy-part/complete/abort multipart, and listing
//! incomplete uploads. Works against any S3-compatible server reachable
//! over plain HTTP (path-style addressing); it is configured from the
//! environment and excluded from the hermetic test suite.

use std::collections::BTreeMap;

use async_trait::async_trait;
use quick_xml::events::Event;
use quick_xml::Reader;
use sha2::{Digest, Sha256};

use crate::sigv4::{self, RequestToSign, SigningContext, EMPTY_PAYLOAD_SHA256};
use crate::types::{MultipartUpload, ObjectMeta, ObjectRef, StoreMetrics, UploadState};
use crate::{ObjectStore, PartSpec, StoreError, StoreResult};

#[derive(Debug, Clone)]
pub struct WireConfig {
    /// Base endpoint, e.g. `http://127.0.0.1:9000`.
    pub endpoint: String,
    pub access_key: String,
    pub secret_key: String,
    pub region: String,
}

impl WireConfig {
    /// Reads MIRROR_S3_ENDPOINT, MIRROR_S3_KEY, MIRROR_S3_SECRET and the
    /// optional MIRROR_S3_REGION (default us-east-1). Returns None when the
    /// endpoint is unset.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("MIRROR_S3_ENDPOINT").ok()?;
        Some(WireConfig {
            endpoint,
            access_key: std::env::var("MIRROR_S3_KEY").unwrap_or_default(),
            secret_key: std::env::var("MIRROR_S3_SECRET").unwrap_or_default(),
            region: std::env::var("MIRROR_S3_REGION").unwrap_or_else(|_| "us-east-1".to_string()),
        })
    }
}

pub struct WireStore {
    config: WireConfig,
    signing: SigningContext,
    host: String,
    client: reqwest::Client,
}

impl WireStore {
    pub fn new(config: WireConfig) -> StoreResult<Self> {
        let url = reqwest::Url::parse(&config.endpoint)
            .map_err(|err| StoreError::backend(format!("bad endpoint: {err}")))?;
        let mut host = url
            .host_str()
            .ok_or_else(|| StoreError::backend("endpoint has no host"))?
            .to_string();
        if let Some(port) = url.port() {
            host = format!("{host}:{port}");
        }
        let signing = SigningContext {
            access_key: config.access_key.clone(),
            secret_key: config.secret_key.clone(),
            region: config.region.clone(),
            service: "s3".to_string(),
        };
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(900))
            .connect_timeout(std::time::Duration::from_secs(10))
            .build()
            .map_err(|err| StoreError::backend(err.to_string()))?;
        Ok(WireStore {
            config,
            signing,
            host,
            client,
        })
    }

    async fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        query: &[(String, String)],
        headers: &[(String, String)],
        body: Option<Vec<u8>>,
    ) -> StoreResult<reqwest::Response> {
        let payload_sha = match &body {
            Some(bytes) => hex::encode(Sha256::digest(bytes)),
            None => EMPTY_PAYLOAD_SHA256.to_string(),
        };
        let amz_date = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let signature = sigv4::sign(
            &self.signing,
            &RequestToSign {
                method: method.as_str(),
                host: &self.host,
                path,
                query,
                headers,
                payload_sha256: &payload_sha,
                amz_date: &amz_date,
            },
        );

        let mut url = format!(
            "{}{}",
            self.config.endpoint.trim_end_matches('/'),
            sigv4::encode_path(path)
        );
        if !query.is_empty() {
            let qs = query
                .iter()
                .map(|(k, v)| {
                    if v.is_empty() {
                        k.clone()
                    } else {
                        format!("{k}={v}")
                    }
                })
                .collect::<Vec<_>>()
                .join("&");
            url = format!("{url}?{qs}");
        }

        let mut request = self.client.request(method, &url);
        for (name, value) in &signature.signed_headers {
            if name == "host" {
                continue;
            }
            request = request.header(name, value);
        }
        request = request.header("authorization", &signature.authorization);
        if let Some(bytes) = body {
            request = request.body(bytes);
        }
        request.send().await.map_err(|err| {
            if err.is_timeout() || err.is_connect() {
                StoreError::intermittent(err.to_string())
            } else {
                StoreError::backend(err.to_string())
            }
        })
    }

    /// Maps an error response to the store taxonomy using the HTTP status
    /// and the error code in the XML body when present.
    async fn error_for(&self, response: reqwest::Response, context: &ObjectRef) -> StoreError {
        let status = response.status();
        let body = response.bytes().await.unwrap_or_default();
        let code = xml_first_text(&body, "Code").unwrap_or_default();
        match (status.as_u16(), code.as_str()) {
            (403, _) | (_, "AccessDenied") => StoreError::PermissionDenied {
                key: context.key.clone(),
            },
            (_, "NoSuchBucket") => StoreError::NoSuchBucket {
                bucket: context.bucket.clone(),
            },
            (404, _) | (_, "NoSuchKey") | (_, "NoSuchUpload") => StoreError::NotFound {
                bucket: context.bucket.clone(),
                key: context.key.clone(),
            },
            (416, _) | (_, "InvalidRange") => StoreError::RangeInvalid {
                start: 0,
                end: 0,
                size: 0,
            },
            (status, _) if status >= 500 || status == 429 || status == 408 => {
                StoreError::intermittent(format!("status {status}: {code}"))
            }
            (status, _) => StoreError::backend(format!("status {status}: {code}")),
        }
    }
}

fn object_path(object: &ObjectRef) -> String {
    format!("/{}/{}", object.bucket, object.key)
}

fn copy_source(source: &ObjectRef) -> String {
    format!("/{}/{}", source.bucket, source.key)
}

/// First text content of `tag` anywhere in the document.
fn xml_first_text(xml: &[u8], tag: &str) -> Option<String> {
    let mut reader = Reader::from_reader(xml);
    let mut inside = false;
    let mut buf = Vec::new();
    loop {
        match reader.read_event_into(&mut buf) {
            Ok(Event::Start(start)) if start.name().as_ref() == tag.as_bytes() => inside = true,
            Ok(Event::Text(text)) if inside => {
                return text.xml10_content().ok().map(|t| t.into_owned());
            }
            Ok(Event::End(end)) if end.name().as_ref() == tag.as_bytes() => inside = false,
            Ok(Event::Eof) => return None,
            Err(_) => return None,
            _ => {}
        }
        buf.clear();
    }
}

/// Key/UploadId pairs of `<Upload>` entries in a ListMultipartUploads page,
/// plus the truncation markers for pagination.
fn parse_upload_list(xml: &[u8]) -> (Vec<(String, String)>, bool, Option<(String, String)>) {
    let mut reader = Reader::from_reader(xml);
    let mut buf = Vec::new();
    let mut uploads = Vec::new();
    let mut in_upload = false;
    let mut current_tag: Option<String> = None;
    let mut key = String::new();
    let mut upload_id = String::new();
    let mut is_truncated = false;
    let mut next_key_marker = String::new();
    let mut next_id_marker = String::new();
    loop {
        match reader.read_event_into(&mut buf) {
            Ok(Event::Start(start)) => {
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                if name == "Upload" {
                    in_upload = true;
                    key.clear();
                    upload_id.clear();
                } else {
                    current_tag = Some(name);
                }
            }
            Ok(Event::Text(text)) => {
                let value = text.xml10_content().map(|t| t.into_owned()).unwrap_or_default();
                match current_tag.as_deref() {
                    Some("Key") if in_upload => key = value,
                    Some("UploadId") if in_upload => upload_id = value,
                    Some("IsTruncated") => is_truncated = value == "true",
                    Some("NextKeyMarker") => next_key_marker = value,
                    Some("NextUploadIdMarker") => next_id_marker = value,
                    _ => {}
                }
            }
            Ok(Event::End(end)) => {
                if end.name().as_ref() == b"Upload" {
                    in_upload = false;
                    if !key.is_empty() && !upload_id.is_empty() {
                        uploads.push((key.clone(), upload_id.clone()));
                    }
                }
                current_tag = None;
            }
            Ok(Event::Eof) => break,
            Err(_) => break,
            _ => {}
        }
        buf.clear();
    }
    let markers = if is_truncated {
        Some((next_key_marker, next_id_marker))
    } else {
        None
    };
    (uploads, is_truncated, markers)
}

fn complete_body(parts: &[(u32, String)]) -> Vec<u8> {
    let mut body = String::from("<CompleteMultipartUpload>");
    for (number, etag) in parts {
        body.push_str(&format!(
            "<Part><PartNumber>{number}</PartNumber><ETag>{etag}</ETag></Part>"
        ));
    }
    body.push_str("</CompleteMultipartUpload>");
    body.into_bytes()
}

#[async_trait]
impl ObjectStore for WireStore {
    async fn create_bucket(&self, bucket: &str) -> StoreResult<()> {
        let path = format!("/{bucket}");
        let response = self
            .send(reqwest::Method::PUT, &path, &[], &[], None)
            .await?;
        if response.status().is_success() {
            return Ok(());
        }
        let context = ObjectRef::new(bucket, "-");
        let err = self.error_for(response, &context).await;
        if let StoreError::Backend { reason } = &err {
            if reason.contains("BucketAlreadyOwnedByYou") || reason.contains("BucketAlreadyExists")
            {
                return Ok(());
            }
        }
        Err(err)
    }

    async fn put_object(&self, target: &ObjectRef, content: Vec<u8>) -> StoreResult<String> {
        let response = self
            .send(
                reqwest::Method::PUT,
                &object_path(target),
                &[],
                &[],
                Some(content),
            )
            .await?;
        if response.status().is_success() {
            let etag = response
                .headers()
                .get("etag")
                .and_then(|v| v.to_str().ok())
                .unwrap_or_default()
                .trim_matches('"')
                .to_string();
            return Ok(etag);
        }
        Err(self.error_for(response, target).await)
    }

    async fn get_object(&self, source: &ObjectRef) -> StoreResult<Vec<u8>> {
        let response = self
            .send(reqwest::Method::GET, &object_path(source), &[], &[], None)
            .await?;
        if response.status().is_success() {
            return Ok(response
                .bytes()
                .await
                .map_err(|err| StoreError::backend(err.to_string()))?
                .to_vec());
        }
        Err(self.error_for(response, source).await)
    }

    async fn head_object(&self, source: &ObjectRef) -> StoreResult<ObjectMeta> {
        let response = self
            .send(reqwest::Method::HEAD, &object_path(source), &[], &[], None)
            .await?;
        if response.status().is_success() {
            let size = response
                .headers()
                .get("content-length")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            let etag = response
                .headers()
                .get("etag")
                .and_then(|v| v.to_str().ok())
                .unwrap_or_default()
                .trim_matches('"')
                .to_string();
            return Ok(ObjectMeta {
                size,
                etag,
                readable: true,
            });
        }
        // HEAD responses carry no body, so classify on status alone.
        match response.status().as_u16() {
            403 => Err(StoreError::PermissionDenied {
                key: source.key.clone(),
            }),
            404 => Err(StoreError::NotFound {
                bucket: source.bucket.clone(),
                key: source.key.clone(),
            }),
            status if status >= 500 || status == 429 || status == 408 => {
                Err(StoreError::intermittent(format!("head status {status}")))
            }
            status => Err(StoreError::backend(format!("head status {status}"))),
        }
    }

    async fn copy_object(&self, source: &ObjectRef, target: &ObjectRef) -> StoreResult<String> {
        let headers = vec![(
            "x-amz-copy-source".to_string(),
            copy_source(source),
        )];
        let response = self
            .send(
                reqwest::Method::PUT,
                &object_path(target),
                &[],
                &headers,
                None,
            )
            .await?;
        if response.status().is_success() {
            let body = response
                .bytes()
                .await
                .map_err(|err| StoreError::backend(err.to_string()))?;
            // A 200 body can still carry an error document.
            if xml_first_text(&body, "Code").is_some() {
                return Err(StoreError::intermittent("copy returned an error body"));
            }
            return Ok(xml_first_text(&body, "ETag")
                .unwrap_or_default()
                .trim_matches('"')
                .to_string());
        }
        Err(self.error_for(response, source).await)
    }

    async fn create_multipart(&self, target: &ObjectRef) -> StoreResult<MultipartUpload> {
        let query = vec![("uploads".to_string(), String::new())];
        let response = self
            .send(
                reqwest::Method::POST,
                &object_path(target),
                &query,
                &[],
                None,
            )
            .await?;
        if response.status().is_success() {
            let body = response
                .bytes()
                .await
                .map_err(|err| StoreError::backend(err.to_string()))?;
            let upload_id = xml_first_text(&body, "UploadId")
                .ok_or_else(|| StoreError::backend("create response missing UploadId"))?;
            return Ok(MultipartUpload {
                upload_id,
                target: target.clone(),
                completed_parts: BTreeMap::new(),
                state: UploadState::Open,
            });
        }
        Err(self.error_for(response, target).await)
    }

    async fn upload_part_copy(
        &self,
        upload: &MultipartUpload,
        source: &ObjectRef,
        part: &PartSpec,
    ) -> StoreResult<String> {
        let query = vec![
            ("partNumber".to_string(), part.part_number.to_string()),
            ("uploadId".to_string(), upload.upload_id.clone()),
        ];
        let headers = vec![
            ("x-amz-copy-source".to_string(), copy_source(source)),
            (
                "x-amz-copy-source-range".to_string(),
                format!("bytes={}-{}", part.start, part.end),
            ),
        ];
        let response = self
            .send(
                reqwest::Method::PUT,
                &object_path(&upload.target),
                &query,
                &headers,
                None,
            )
            .await?;
        if response.status().is_success() {
            let body = response
                .bytes()
                .await
                .map_err(|err| StoreError::backend(err.to_string()))?;
            if xml_first_text(&body, "Code").is_some() {
                return Err(StoreError::intermittent("part copy returned an error body"));
            }
            return Ok(xml_first_text(&body, "ETag")
                .unwrap_or_default()
                .trim_matches('"')
                .to_string());
        }
        Err(self.error_for(response, source).await)
    }

    async fn complete_multipart(
        &self,
        upload: &MultipartUpload,
        parts: &[(u32, String)],
    ) -> StoreResult<String> {
        let query = vec![("uploadId".to_string(), upload.upload_id.clone())];
        let response = self
            .send(
                reqwest::Method::POST,
                &object_path(&upload.target),
                &query,
                &[],
                Some(complete_body(parts)),
            )
            .await?;
        if response.status().is_success() {
            let body = response
                .bytes()
                .await
                .map_err(|err| StoreError::backend(err.to_string()))?;
            if let Some(code) = xml_first_text(&body, "Code") {
                return Err(StoreError::intermittent(format!(
                    "complete returned an error body: {code}"
                )));
            }
            return Ok(xml_first_text(&body, "ETag")
                .unwrap_or_default()
                .trim_matches('"')
                .to_string());
        }
        Err(self.error_for(response, &upload.target).await)
    }

    async fn abort_multipart(&self, upload: &MultipartUpload) -> StoreResult<()> {
        let query = vec![("uploadId".to_string(), upload.upload_id.clone())];
        let response = self
            .send(
                reqwest::Method::DELETE,
                &object_path(&upload.target),
                &query,
                &[],
                None,
            )
            .await?;
        if response.status().is_success() {
            return Ok(());
        }
        match self.error_for(response, &upload.target).await {
            StoreError::NotFound { .. } => Ok(()),
            err => Err(err),
        }
    }

    async fn list_incomplete_uploads(&self, bucket: &str) -> StoreResult<Vec<MultipartUpload>> {
        let path = format!("/{bucket}");
        let mut results = Vec::new();
        let mut markers: Option<(String, String)> = None;
        loop {
            let mut query = vec![("uploads".to_string(), String::new())];
            if let Some((key_marker, id_marker)) = &markers {
                query.push(("key-marker".to_string(), key_marker.clone()));
                query.push(("upload-id-marker".to_string(), id_marker.clone()));
            }
            let response = self
                .send(reqwest::Method::GET, &path, &query, &[], None)
                .await?;
            if !response.status().is_success() {
                let context = ObjectRef::new(bucket, "-");
                return Err(self.error_for(response, &context).await);
            }
            let body = response
                .bytes()
                .await
                .map_err(|err| StoreError::backend(err.to_string()))?;
            let (uploads, truncated, next) = parse_upload_list(&body);
            for (key, upload_id) in uploads {
                results.push(MultipartUpload {
                    upload_id,
                    target: ObjectRef::new(bucket, key),
                    completed_parts: BTreeMap::new(),
                    state: UploadState::Open,
                });
            }
            if !truncated {
                break;
            }
            markers = next;
            if markers.is_none() {
                break;
            }
        }
        Ok(results)
    }

    fn instrument(&self) -> Option<StoreMetrics> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_initiate_response() {
        let xml = br#"<?xml version="1.0" encoding="UTF-8"?>
<InitiateMultipartUploadResult>
  <Bucket>dest</Bucket><Key>a/b.bin</Key>
  <UploadId>VXBsb2FkIElE</UploadId>
</InitiateMultipartUploadResult>"#;
        assert_eq!(
            xml_first_text(xml, "UploadId").as_deref(),
            Some("VXBsb2FkIElE")
        );
    }

    #[test]
    fn parses_copy_part_etag() {
        let xml = br#"<CopyPartResult><LastModified>2026-01-01T00:00:00Z</LastModified><ETag>"abc123"</ETag></CopyPartResult>"#;
        assert_eq!(
            xml_first_text(xml, "ETag").map(|t| t.trim_matches('"').to_string()),
            Some("abc123".to_string())
        );
    }

    #[test]
    fn parses_upload_listing_with_pagination_markers() {
        let xml = br#"<ListMultipartUploadsResult>
  <Bucket>b</Bucket>
  <NextKeyMarker>k2</NextKeyMarker>
  <NextUploadIdMarker>u2</NextUploadIdMarker>
  <IsTruncated>true</IsTruncated>
  <Upload><Key>k1</Key><UploadId>u1</UploadId></Upload>
  <Upload><Key>k2</Key><UploadId>u2</UploadId></Upload>
</ListMultipartUploadsResult>"#;
        let (uploads, truncated, markers) = parse_upload_list(xml);
        assert_eq!(
            uploads,
            vec![
                ("k1".to_string(), "u1".to_string()),
                ("k2".to_string(), "u2".to_string())
            ]
        );
        assert!(truncated);
        assert_eq!(markers, Some(("k2".to_string(), "u2".to_string())));
    }

    #[test]
    fn builds_complete_body_in_part_order() {
        let body = complete_body(&[(1, "e1".to_string()), (2, "e2".to_string())]);
        let text = String::from_utf8(body).unwrap();
        assert_eq!(
            text,
            "<CompleteMultipartUpload>\
             <Part><PartNumber>1</PartNumber><ETag>e1</ETag></Part>\
             <Part><PartNumber>2</PartNumber><ETag>e2</ETag></Part>\
             </CompleteMultipartUpload>"
        );
    }

    #[test]
    fn empty_error_code_lookup_returns_none() {
        assert_eq!(xml_first_text(b"<Ok></Ok>", "Code"), None);
    }
}
